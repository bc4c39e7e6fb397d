"""Procedural benchmark shapes with exact per-face part labels.

Three families of simple man-made objects (tables, mugs, chair-like
seats) are generated with randomized proportions.  Every face carries a
ground-truth part label by construction, which makes the families usable
as a small, fully controlled segmentation benchmark.  Shapes are built
with +Y as the upright axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import Mesh, mesh_from_arrays

FAMILIES = ("table", "mug", "chair")

LABEL_NAMES = {
    "table": ("top", "leg"),
    "mug": ("body", "handle"),
    "chair": ("seat", "leg", "back"),
}


@dataclass(frozen=True)
class SyntheticShapeSpec:
    """Recipe for one procedural shape."""

    family: str
    seed: int
    noise: float = 0.0  # vertex jitter stddev, fraction of bounding radius

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; "
                             f"choose from {FAMILIES}")


class _Builder:
    """Accumulates labeled triangle soup from quad-grid patches."""

    def __init__(self):
        self.vertices = []
        self.faces = []
        self.labels = []

    def add_grid(self, origin, du, dv, nu, nv, label):
        """Planar patch of nu*nv quads spanning origin + [0,1]du + [0,1]dv,
        wound so the normal points along du x dv."""
        origin = np.asarray(origin, dtype=np.float64)
        du = np.asarray(du, dtype=np.float64)
        dv = np.asarray(dv, dtype=np.float64)
        base = len(self.vertices)
        for j in range(nv + 1):
            for i in range(nu + 1):
                self.vertices.append(origin + du * (i / nu) + dv * (j / nv))
        for j in range(nv):
            for i in range(nu):
                v00 = base + j * (nu + 1) + i
                v10 = v00 + 1
                v01 = v00 + (nu + 1)
                v11 = v01 + 1
                self.faces.append((v00, v10, v11))
                self.faces.append((v00, v11, v01))
                self.labels.append(label)
                self.labels.append(label)

    def add_box(self, lo, hi, segments, label):
        """Axis-aligned box with outward normals; ``segments`` = (nx, ny, nz)
        quad counts along each axis."""
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        sx, sy, sz = hi - lo
        nx, ny, nz = segments
        ex = np.array([sx, 0, 0])
        ey = np.array([0, sy, 0])
        ez = np.array([0, 0, sz])
        # +x, -x, +y, -y, +z, -z
        self.add_grid([hi[0], lo[1], lo[2]], ez, ey, nz, ny, label)
        self.add_grid([lo[0], lo[1], lo[2]], ey, ez, ny, nz, label)
        self.add_grid([lo[0], hi[1], lo[2]], ex, ez, nx, nz, label)
        self.add_grid([lo[0], lo[1], lo[2]], ez, ex, nz, nx, label)
        self.add_grid([lo[0], lo[1], hi[2]], ex, ey, nx, ny, label)
        self.add_grid([hi[0], lo[1], lo[2]], -ex, ey, nx, ny, label)

    def add_lathe(self, profile, nseg, label, flip=False):
        """Surface of revolution about +Y.  ``profile`` is a polyline of
        (radius, y) pairs; consecutive pairs become rings of quads."""
        profile = np.asarray(profile, dtype=np.float64)
        angles = np.linspace(0.0, 2.0 * np.pi, nseg, endpoint=False)
        cos, sin = np.cos(angles), np.sin(angles)
        base = len(self.vertices)
        rows = []
        for r, y in profile:
            row = []
            if r == 0.0:
                row.append(len(self.vertices))
                self.vertices.append(np.array([0.0, y, 0.0]))
                rows.append(row * nseg)
                continue
            for k in range(nseg):
                row.append(len(self.vertices))
                self.vertices.append(np.array([r * cos[k], y, r * sin[k]]))
            rows.append(row)
        for j in range(len(profile) - 1):
            ra, rb = rows[j], rows[j + 1]
            for k in range(nseg):
                k2 = (k + 1) % nseg
                quad = (ra[k], ra[k2], rb[k2], rb[k])
                tris = [(quad[0], quad[1], quad[2]), (quad[0], quad[2], quad[3])]
                for a, b, c in tris:
                    if a == b or b == c or a == c:
                        continue
                    if flip:
                        a, c = c, a
                    self.faces.append((a, b, c))
                    self.labels.append(label)
        _ = base

    def add_tube_sweep(self, path, radii_u, radii_v, tube_radius, nseg, label):
        """Open tube around a 3D polyline; cross-sections lie in the plane
        spanned by per-sample unit vectors ``radii_u`` and ``radii_v``."""
        path = np.asarray(path, dtype=np.float64)
        m = path.shape[0]
        angles = np.linspace(0.0, 2.0 * np.pi, nseg, endpoint=False)
        ring_ids = []
        for s in range(m):
            row = []
            for ang in angles:
                p = (path[s]
                     + tube_radius * np.cos(ang) * radii_u[s]
                     + tube_radius * np.sin(ang) * radii_v[s])
                row.append(len(self.vertices))
                self.vertices.append(p)
            ring_ids.append(row)
        for s in range(m - 1):
            ra, rb = ring_ids[s], ring_ids[s + 1]
            for k in range(nseg):
                k2 = (k + 1) % nseg
                self.faces.append((ra[k], rb[k], rb[k2]))
                self.faces.append((ra[k], rb[k2], ra[k2]))
                self.labels.append(label)
                self.labels.append(label)

    def build(self, noise=0.0, rng=None):
        vertices = np.asarray(self.vertices, dtype=np.float64)
        faces = np.asarray(self.faces, dtype=np.int64)
        labels = np.asarray(self.labels, dtype=np.int32)
        if noise > 0.0:
            # weld first so coincident seam vertices jitter together
            from .mesh import _bounding_sphere, _weld_vertices
            _, radius = _bounding_sphere(vertices)
            vertices, faces = _weld_vertices(vertices, faces, 1e-6 * radius)
            vertices = vertices + rng.normal(0.0, noise * radius,
                                             size=vertices.shape)
        mesh = mesh_from_arrays(vertices, faces)
        if mesh.num_faces != faces.shape[0]:
            raise RuntimeError("synthetic mesh lost faces during repair")
        return mesh, labels


def _make_table(rng: np.random.Generator, builder: _Builder):
    w = rng.uniform(1.0, 1.5)
    d = rng.uniform(1.0, 1.5)
    h = rng.uniform(0.85, 1.2)
    t = rng.uniform(0.09, 0.15)
    leg = rng.uniform(0.13, 0.2)
    inset = rng.uniform(0.02, 0.07)
    builder.add_box([-w / 2, h - t, -d / 2], [w / 2, h, d / 2],
                    (8, 2, 8), label=0)
    for sx in (-1, 1):
        for sz in (-1, 1):
            cx = sx * (w / 2 - inset - leg / 2)
            cz = sz * (d / 2 - inset - leg / 2)
            builder.add_box([cx - leg / 2, 0.0, cz - leg / 2],
                            [cx + leg / 2, h - t / 2, cz + leg / 2],
                            (2, 6, 2), label=1)


def _make_mug(rng: np.random.Generator, builder: _Builder):
    r = rng.uniform(0.5, 0.65)
    h = rng.uniform(1.0, 1.3)
    wall = rng.uniform(0.08, 0.12)
    bottom = rng.uniform(0.08, 0.12)
    nseg = 24
    ri = r - wall
    ys = np.linspace(0.0, h, 7)
    outer = [(r, y) for y in ys]
    builder.add_lathe(outer, nseg, label=0, flip=True)
    rim = [(r, h), (ri, h)]
    builder.add_lathe(rim, nseg, label=0, flip=True)
    inner = [(ri, y) for y in np.linspace(h, bottom, 7)]
    builder.add_lathe(inner, nseg, label=0, flip=True)
    builder.add_lathe([(ri, bottom), (0.0, bottom)], nseg, label=0, flip=True)
    builder.add_lathe([(0.0, 0.0), (r, 0.0)], nseg, label=0, flip=True)

    # handle: vertical torus arc in the xy-plane, ends sunk into the wall
    tube = rng.uniform(0.07, 0.1)
    major = rng.uniform(0.3, 0.38) * h
    cx = r - 0.2 * tube
    cy = h * rng.uniform(0.45, 0.55)
    arc = np.linspace(-0.45 * np.pi, 0.45 * np.pi, 9)
    path = np.stack([cx + major * np.cos(arc),
                     cy + major * np.sin(arc),
                     np.zeros_like(arc)], axis=1)
    radial = np.stack([np.cos(arc), np.sin(arc), np.zeros_like(arc)], axis=1)
    axis_z = np.broadcast_to(np.array([0.0, 0.0, 1.0]), radial.shape)
    builder.add_tube_sweep(path, radial, axis_z, tube, 8, label=1)


def _make_chair(rng: np.random.Generator, builder: _Builder):
    w = rng.uniform(0.9, 1.2)
    d = rng.uniform(0.9, 1.2)
    sh = rng.uniform(0.7, 0.95)       # seat height
    st = rng.uniform(0.09, 0.14)      # seat thickness
    bh = rng.uniform(0.7, 1.0)        # backrest height above seat
    bt = rng.uniform(0.09, 0.14)      # backrest thickness
    leg = rng.uniform(0.12, 0.18)
    builder.add_box([-w / 2, sh - st, -d / 2], [w / 2, sh, d / 2],
                    (6, 1, 6), label=0)
    for sx in (-1, 1):
        for sz in (-1, 1):
            cx = sx * (w / 2 - 0.04 - leg / 2)
            cz = sz * (d / 2 - 0.04 - leg / 2)
            builder.add_box([cx - leg / 2, 0.0, cz - leg / 2],
                            [cx + leg / 2, sh - st / 2, cz + leg / 2],
                            (2, 5, 2), label=1)
    builder.add_box([-w / 2, sh - st / 2, d / 2 - bt],
                    [w / 2, sh + bh, d / 2],
                    (6, 4, 2), label=2)


_MAKERS = {"table": _make_table, "mug": _make_mug, "chair": _make_chair}


def num_labels(family: str) -> int:
    return len(LABEL_NAMES[family])


def generate_shape(spec: SyntheticShapeSpec):
    """Build one labeled shape.  Returns (mesh, per-face labels)."""
    rng = np.random.default_rng(spec.seed)
    builder = _Builder()
    _MAKERS[spec.family](rng, builder)
    return builder.build(noise=spec.noise, rng=rng)


# convex shapes used by coverage checks and demos

def icosphere(subdivisions: int = 2, radius: float = 1.0) -> Mesh:
    """Geodesic sphere from a subdivided icosahedron."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    for _ in range(subdivisions):
        new_faces = []
        midpoint = {}
        verts_list = list(verts)

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in midpoint:
                midpoint[key] = len(verts_list)
                verts_list.append(0.5 * (verts_list[a] + verts_list[b]))
            return midpoint[key]

        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        verts = np.asarray(verts_list)
        faces = np.asarray(new_faces, dtype=np.int64)
    verts = verts / np.linalg.norm(verts, axis=1, keepdims=True) * radius
    return mesh_from_arrays(verts, faces)


def box(extents=(1.0, 1.0, 1.0), segments=(3, 3, 3)) -> Mesh:
    b = _Builder()
    e = np.asarray(extents, dtype=np.float64) / 2.0
    b.add_box(-e, e, segments, label=0)
    mesh, _ = b.build()
    return mesh


def save_mesh_obj(path, mesh: Mesh) -> None:
    """Write positions and triangles; one OBJ polygon per triangle."""
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")
