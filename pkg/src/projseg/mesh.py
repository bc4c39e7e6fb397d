"""Triangle mesh loading and geometric precomputation.

A :class:`Mesh` is the unit every pipeline stage annotates.  Loading
repairs the common defects of modeled "polygon soups" (duplicate
vertices, zero-area faces, inconsistent winding) and precomputes face
normals, areas and a bounding sphere.  On top of that this module
provides area-uniform surface sampling and the pairwise face graph
(dihedral angles between edge-adjacent faces plus approximate geodesic
distances between nearby faces) consumed by the surface smoothing stage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra as _sparse_dijkstra

WELD_TOL_FACTOR = 1e-6
GEODESIC_CUTOFF_FACTOR = 0.1


class MeshError(ValueError):
    """Unparsable mesh file, or a mesh left empty after repair."""


@dataclass(frozen=True)
class Mesh:
    """Indexed triangle mesh with per-face geometry.

    vertices        (V, 3) float64 positions in model units
    faces           (F, 3) int32 vertex indices
    face_normals    (F, 3) float64 unit normals
    face_areas      (F,)   float64, all > 0
    bounding_sphere (center (3,), radius > 0)
    face_source     (F,) int32; index of the source polygon each triangle
                    came from (fan triangulation splits polygons), used to
                    carry per-polygon labels onto triangles
    """

    vertices: np.ndarray
    faces: np.ndarray
    face_normals: np.ndarray
    face_areas: np.ndarray
    bounding_sphere: tuple
    face_source: np.ndarray

    @property
    def num_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def num_faces(self) -> int:
        return int(self.faces.shape[0])

    @property
    def radius(self) -> float:
        return float(self.bounding_sphere[1])

    @property
    def center(self) -> np.ndarray:
        return self.bounding_sphere[0]

    def face_centroids(self) -> np.ndarray:
        return self.vertices[self.faces].mean(axis=1)


@dataclass(frozen=True)
class SampledPointSet:
    """Area-uniform surface samples with their source face and normal."""

    positions: np.ndarray  # (n, 3)
    normals: np.ndarray    # (n, 3)
    face_ids: np.ndarray   # (n,)

    @property
    def count(self) -> int:
        return int(self.positions.shape[0])


@dataclass(frozen=True)
class PairwiseGraph:
    """Pairwise face terms: edge adjacency and near-surface proximity.

    adjacency_pairs (A, 2) int32, each unordered pair once (f < f')
    adjacency_omega (A,)   angle between face normals divided by pi, in [0, 1]
    distance_pairs  (D, 2) int32, pairs closer (along the surface) than
                    ``cutoff`` = GEODESIC_CUTOFF_FACTOR * bounding radius
    distance_values (D,)   geodesic distance divided by ``cutoff``, in [0, 1]
    """

    adjacency_pairs: np.ndarray
    adjacency_omega: np.ndarray
    distance_pairs: np.ndarray
    distance_values: np.ndarray

    @property
    def num_adjacency(self) -> int:
        return int(self.adjacency_pairs.shape[0])

    @property
    def num_distance(self) -> int:
        return int(self.distance_pairs.shape[0])


# ---------------------------------------------------------------------------
# construction and repair

def _bounding_sphere(vertices: np.ndarray) -> tuple:
    """Ritter's enclosing sphere.  Every step is built from distances
    only, so rigid motions of the mesh move the sphere rigidly (no
    axis-aligned constructions, which would change the radius under
    rotation)."""
    p0 = vertices[0]
    p1 = vertices[np.argmax(((vertices - p0) ** 2).sum(axis=1))]
    p2 = vertices[np.argmax(((vertices - p1) ** 2).sum(axis=1))]
    center = 0.5 * (p1 + p2)
    radius = 0.5 * float(np.linalg.norm(p2 - p1))
    for _ in range(2):  # expansion passes until everything fits
        d = np.sqrt(((vertices - center) ** 2).sum(axis=1))
        far = int(np.argmax(d))
        if d[far] <= radius * (1 + 1e-12):
            break
        # grow just enough to include the farthest point
        new_radius = 0.5 * (radius + d[far])
        center = center + (vertices[far] - center) * (
            (new_radius - radius) / d[far])
        radius = new_radius
    d_max = float(np.sqrt(((vertices - center) ** 2).sum(axis=1).max()))
    radius = max(radius, d_max, np.finfo(np.float64).tiny)
    return center, radius


def _weld_vertices(vertices: np.ndarray, faces: np.ndarray, tol: float):
    keys = np.round(vertices / tol).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True,
                                  return_inverse=True)
    # keep the first occurrence of each welded position for stable output
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    new_vertices = vertices[first[order]]
    remap = rank[inverse]
    return new_vertices, remap[faces]


def _drop_degenerate(vertices, faces, face_source, area_eps):
    a = vertices[faces[:, 0]]
    b = vertices[faces[:, 1]]
    c = vertices[faces[:, 2]]
    cross = np.cross(b - a, c - a)
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    distinct = ((faces[:, 0] != faces[:, 1])
                & (faces[:, 1] != faces[:, 2])
                & (faces[:, 0] != faces[:, 2]))
    keep = distinct & (areas > area_eps)
    return faces[keep], face_source[keep]


def _face_edge_groups(faces: np.ndarray, num_vertices: int):
    """Group faces by undirected edge.  Returns (sorted face ids, group
    starts, group edge keys) over the 3F directed edges."""
    e = np.stack([
        faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]],
    ], axis=1).reshape(-1, 2)
    lo = e.min(axis=1).astype(np.int64)
    hi = e.max(axis=1).astype(np.int64)
    keys = lo * num_vertices + hi
    owner = np.repeat(np.arange(faces.shape[0]), 3)
    order = np.argsort(keys, kind="stable")
    keys_sorted = keys[order]
    owner_sorted = owner[order]
    starts = np.flatnonzero(np.r_[True, keys_sorted[1:] != keys_sorted[:-1]])
    return owner_sorted, np.r_[starts, keys_sorted.size], keys_sorted[starts]


def _orient_faces(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Propagate a consistent winding across edge-adjacent faces, then flip
    whole components so the (area-weighted) majority of normals points away
    from the mesh center."""
    F = faces.shape[0]
    owner, bounds, _ = _face_edge_groups(faces, vertices.shape[0])
    neighbors = [[] for _ in range(F)]
    for gi in range(bounds.size - 1):
        group = owner[bounds[gi]:bounds[gi + 1]]
        for i in range(group.size):
            for j in range(i + 1, group.size):
                neighbors[group[i]].append(group[j])
                neighbors[group[j]].append(group[i])

    def directed_edges(face):
        return {(face[0], face[1]), (face[1], face[2]), (face[2], face[0])}

    flip = np.zeros(F, dtype=bool)
    visited = np.zeros(F, dtype=bool)
    faces = faces.copy()
    center = vertices.mean(axis=0)
    for root in range(F):
        if visited[root]:
            continue
        component = [root]
        visited[root] = True
        queue = [root]
        while queue:
            f = queue.pop()
            ef = directed_edges(faces[f] if not flip[f] else faces[f][::-1])
            for g in neighbors[f]:
                if visited[g]:
                    continue
                visited[g] = True
                component.append(g)
                # consistent winding traverses a shared edge in opposite
                # directions; a shared directed edge means g must flip
                eg = directed_edges(faces[g])
                flip[g] = bool(ef & eg)
                queue.append(g)
        # outward vote per connected component
        comp = np.asarray(component)
        tri = vertices[faces[comp]]
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        sign = np.where(flip[comp], -1.0, 1.0)[:, None]
        votes = (cross * sign * (tri.mean(axis=1) - center)).sum()
        if votes < 0.0:
            flip[comp] = ~flip[comp]
    out = faces.copy()
    out[flip] = out[flip][:, ::-1]
    return out


def mesh_from_arrays(vertices, faces, face_source=None, *,
                     weld: bool = True, orient: bool = True) -> Mesh:
    """Build a repaired :class:`Mesh` from raw arrays.

    Repair welds coincident vertices (tolerance relative to the raw
    bounding radius), drops degenerate faces, and attempts a consistent
    front-facing orientation by propagating windings across shared edges.
    """
    vertices = np.ascontiguousarray(vertices, dtype=np.float64)
    faces = np.ascontiguousarray(faces, dtype=np.int32)
    if vertices.ndim != 2 or vertices.shape[1] != 3:
        raise MeshError("vertices must be (V, 3)")
    if faces.ndim != 2 or faces.shape[1] != 3:
        raise MeshError("faces must be (F, 3)")
    if faces.size and (faces.min() < 0 or faces.max() >= len(vertices)):
        raise MeshError("face index out of range")
    if face_source is None:
        face_source = np.arange(faces.shape[0], dtype=np.int32)
    else:
        face_source = np.asarray(face_source, dtype=np.int32)

    _, raw_radius = _bounding_sphere(vertices) if len(vertices) else (0, 1.0)
    if weld and len(vertices):
        vertices, faces = _weld_vertices(vertices, faces,
                                         WELD_TOL_FACTOR * raw_radius)
    faces, face_source = _drop_degenerate(
        vertices, faces, face_source, area_eps=1e-12 * raw_radius ** 2)
    if faces.shape[0] == 0:
        raise MeshError("mesh empty after repair")
    used = np.unique(faces)
    remap = np.full(len(vertices), -1, dtype=np.int32)
    remap[used] = np.arange(used.size, dtype=np.int32)
    vertices = vertices[used]
    faces = remap[faces]
    if orient:
        faces = _orient_faces(vertices, faces)

    a = vertices[faces[:, 0]]
    b = vertices[faces[:, 1]]
    c = vertices[faces[:, 2]]
    cross = np.cross(b - a, c - a)
    norms = np.linalg.norm(cross, axis=1)
    normals = cross / norms[:, None]
    areas = 0.5 * norms
    return Mesh(
        vertices=vertices,
        faces=faces.astype(np.int32),
        face_normals=normals,
        face_areas=areas,
        bounding_sphere=_bounding_sphere(vertices),
        face_source=face_source,
    )


# ---------------------------------------------------------------------------
# OBJ input

def load_mesh(path) -> Mesh:
    """Load an OBJ mesh (positions and faces only; materials ignored).

    Polygons with more than three vertices are fan-triangulated; every
    resulting triangle remembers its source polygon index so per-polygon
    label files stay valid after triangulation.
    """
    vertices = []
    faces = []
    face_source = []
    poly_index = 0
    try:
        with open(path, "r", encoding="utf-8", errors="replace") as fh:
            for lineno, line in enumerate(fh, start=1):
                parts = line.split()
                if not parts or parts[0].startswith("#"):
                    continue
                tag = parts[0]
                if tag == "v":
                    if len(parts) < 4:
                        raise MeshError(f"{path}:{lineno}: malformed vertex")
                    vertices.append([float(parts[1]), float(parts[2]),
                                     float(parts[3])])
                elif tag == "f":
                    if len(parts) < 4:
                        raise MeshError(f"{path}:{lineno}: face with <3 vertices")
                    idx = []
                    for token in parts[1:]:
                        raw = int(token.split("/")[0])
                        idx.append(raw - 1 if raw > 0 else len(vertices) + raw)
                    for k in range(1, len(idx) - 1):
                        faces.append((idx[0], idx[k], idx[k + 1]))
                        face_source.append(poly_index)
                    poly_index += 1
    except (OSError, ValueError) as exc:
        raise MeshError(f"failed to parse {path}: {exc}") from exc
    if not vertices or not faces:
        raise MeshError(f"{path}: no usable geometry")
    return mesh_from_arrays(np.asarray(vertices, dtype=np.float64),
                            np.asarray(faces, dtype=np.int64),
                            np.asarray(face_source, dtype=np.int32))


# ---------------------------------------------------------------------------
# label I/O (one integer per source polygon, line k = polygon k)

def load_face_labels(path, mesh: Mesh | None = None,
                     num_labels: int | None = None) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        raw = np.asarray([int(line) for line in fh if line.strip()],
                         dtype=np.int32)
    if mesh is not None:
        if raw.size <= int(mesh.face_source.max()):
            raise ValueError(
                f"{path}: {raw.size} labels for "
                f"{int(mesh.face_source.max()) + 1} source polygons")
        raw = raw[mesh.face_source]
    if num_labels is not None and raw.size:
        if raw.min() < 0 or raw.max() >= num_labels:
            raise ValueError(f"{path}: label outside [0, {num_labels - 1}]")
    return raw


def save_face_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.int32)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(str(int(v)) for v in labels))
        fh.write("\n")


# ---------------------------------------------------------------------------
# surface sampling

def sample_surface(mesh: Mesh, n: int = 1024, seed: int = 0) -> SampledPointSet:
    """Draw ``n`` points uniformly over the surface area.

    Faces are chosen with probability proportional to area, then a point
    is placed uniformly inside the face via barycentric coordinates.
    Deterministic for a fixed seed.
    """
    if n < 1:
        raise ValueError("need n >= 1 sample points")
    if mesh.num_faces == 0:
        raise MeshError("cannot sample an empty mesh")
    rng = np.random.default_rng(seed)
    prob = mesh.face_areas / mesh.face_areas.sum()
    fids = rng.choice(mesh.num_faces, size=n, p=prob).astype(np.int32)
    uv = rng.random((n, 2))
    over = uv.sum(axis=1) > 1.0
    uv[over] = 1.0 - uv[over]
    tri = mesh.vertices[mesh.faces[fids]]
    pos = (tri[:, 0]
           + uv[:, :1] * (tri[:, 1] - tri[:, 0])
           + uv[:, 1:] * (tri[:, 2] - tri[:, 0]))
    return SampledPointSet(positions=pos,
                           normals=mesh.face_normals[fids].copy(),
                           face_ids=fids)


# ---------------------------------------------------------------------------
# pairwise face graph

def dual_graph_edges(mesh: Mesh):
    """Edge-adjacent face pairs (each once, f < f') and the length of the
    dual path centroid -> shared-edge midpoint -> centroid."""
    owner, bounds, keys = _face_edge_groups(mesh.faces, mesh.num_vertices)
    pairs = []
    edge_keys = []
    for gi in range(bounds.size - 1):
        group = owner[bounds[gi]:bounds[gi + 1]]
        if group.size < 2:
            continue
        group = np.sort(group)
        for i in range(group.size):
            for j in range(i + 1, group.size):
                if group[i] != group[j]:
                    pairs.append((group[i], group[j]))
                    edge_keys.append(keys[gi])
    if not pairs:
        return (np.zeros((0, 2), dtype=np.int32),
                np.zeros(0, dtype=np.float64))
    pairs = np.asarray(pairs, dtype=np.int32)
    edge_keys = np.asarray(edge_keys, dtype=np.int64)
    # drop duplicate unordered pairs (faces can share more than one edge)
    uniq_keys = pairs[:, 0].astype(np.int64) * mesh.num_faces + pairs[:, 1]
    _, sel = np.unique(uniq_keys, return_index=True)
    pairs = pairs[np.sort(sel)]
    edge_keys = edge_keys[np.sort(sel)]
    centroids = mesh.face_centroids()
    v0 = (edge_keys // mesh.num_vertices).astype(np.int64)
    v1 = (edge_keys % mesh.num_vertices).astype(np.int64)
    mid = 0.5 * (mesh.vertices[v0] + mesh.vertices[v1])
    w = (np.linalg.norm(centroids[pairs[:, 0]] - mid, axis=1)
         + np.linalg.norm(centroids[pairs[:, 1]] - mid, axis=1))
    return pairs, w


def build_pairwise_graph(mesh: Mesh,
                         cutoff_factor: float = GEODESIC_CUTOFF_FACTOR,
                         source_block: int = 512) -> PairwiseGraph:
    """Compute adjacency and proximity pair lists.

    Adjacency pairs carry the normal angle divided by pi.  Distance pairs
    are all face pairs whose approximate geodesic distance (Dijkstra over
    the dual graph, through shared-edge midpoints) is strictly below
    ``cutoff_factor`` times the bounding sphere radius; stored distances
    are divided by that cutoff so they land in [0, 1].
    """
    F = mesh.num_faces
    pairs, weights = dual_graph_edges(mesh)
    if pairs.shape[0] == 0:
        return PairwiseGraph(
            adjacency_pairs=np.zeros((0, 2), dtype=np.int32),
            adjacency_omega=np.zeros(0),
            distance_pairs=np.zeros((0, 2), dtype=np.int32),
            distance_values=np.zeros(0))
    dots = (mesh.face_normals[pairs[:, 0]]
            * mesh.face_normals[pairs[:, 1]]).sum(axis=1)
    omega = np.arccos(np.clip(dots, -1.0, 1.0)) / np.pi

    cutoff = cutoff_factor * mesh.radius
    graph = csr_matrix(
        (weights, (pairs[:, 0], pairs[:, 1])), shape=(F, F))
    dist_rows = []
    dist_cols = []
    dist_vals = []
    for start in range(0, F, source_block):
        block = np.arange(start, min(start + source_block, F))
        dmat = _sparse_dijkstra(graph, directed=False, indices=block,
                                limit=cutoff)
        rows, cols = np.nonzero((dmat < cutoff) & np.isfinite(dmat))
        keep = block[rows] < cols  # each unordered pair once, no self pairs
        dist_rows.append(block[rows[keep]])
        dist_cols.append(cols[keep])
        dist_vals.append(dmat[rows[keep], cols[keep]])
    dist_pairs = np.stack([np.concatenate(dist_rows),
                           np.concatenate(dist_cols)], axis=1).astype(np.int32)
    dist_values = np.concatenate(dist_vals) / cutoff
    return PairwiseGraph(adjacency_pairs=pairs,
                         adjacency_omega=omega,
                         distance_pairs=dist_pairs,
                         distance_values=dist_values)
