"""Software rasterizer for shaded / depth / reference / height images.

Perspective projection with a z-buffer.  The shaded channel uses the
Phong reflection model with a single headlight at the eye; the depth
channel is linear eye-space depth mapped [near, far] -> [0, 1] with 1 as
background; the reference channel stores the ID of the front-most face
at each pixel center (-1 where empty), with references suppressed at and
near the silhouette where the image-to-surface mapping is unreliable.

Everything is deterministic: depth ties resolve to the lowest face ID,
and pixel coordinates are computed in a form that makes the four
in-plane camera rotations produce exactly rotated images.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class RenderSettings:
    resolution: int = 512
    fov_y_deg: float = 60.0
    near_factor: float = 0.05   # near plane, fraction of bounding radius
    far_factor: float = 4.0     # far plane, fraction of bounding radius
    ambient: float = 0.1
    diffuse: float = 0.6
    specular: float = 0.3
    shininess: float = 32.0
    silhouette_radius: int = 2          # Chebyshev radius, pixels
    silhouette_depth_tol: float = 0.05  # normalized depth jump
    upright_height: bool = False        # add world-height channel
    pair_budget: int = 4_000_000        # max pixel/face pairs per chunk


@dataclass(frozen=True)
class Camera:
    eye: np.ndarray
    target: np.ndarray
    up: np.ndarray
    fov_y: float            # radians
    resolution: tuple       # (W, H)
    near: float
    far: float

    def basis(self):
        """Right-handed orthonormal (right, up, forward)."""
        fwd = self.target - self.eye
        norm = np.linalg.norm(fwd)
        if norm == 0.0:
            raise ValueError("degenerate camera: eye equals target")
        fwd = fwd / norm
        right = np.cross(fwd, self.up)
        rn = np.linalg.norm(right)
        if rn < 1e-12:
            raise ValueError("camera up vector parallel to view direction")
        right = right / rn
        up = np.cross(right, fwd)
        return right, up, fwd


@dataclass
class RenderedView:
    shaded: np.ndarray          # (H, W) float32 in [0, 1]
    depth: np.ndarray           # (H, W) float32 in [0, 1], 1 = background
    reference: np.ndarray       # (H, W) int32 face IDs, -1 = none
    camera: Camera
    view_id: int
    height: np.ndarray | None = None  # (H, W) float32 in [0, 1]


# ---------------------------------------------------------------------------
# cameras

def _initial_up(look: np.ndarray) -> np.ndarray:
    up = np.array([0.0, 1.0, 0.0])
    if abs(float(look @ up)) > 1.0 - 1e-6:
        up = np.array([1.0, 0.0, 0.0])
    up = up - (up @ look) * look
    return up / np.linalg.norm(up)


def make_cameras(viewpoint, mesh, settings: RenderSettings):
    """Four cameras at the viewpoint with the up vector rotated in-plane
    by 0, 90, 180 and 270 degrees about the view axis."""
    eye = np.asarray(viewpoint.eye, dtype=np.float64)
    target = np.asarray(viewpoint.target, dtype=np.float64)
    look = target - eye
    look = look / np.linalg.norm(look)
    up0 = _initial_up(look)
    side = np.cross(look, up0)
    radius = mesh.radius
    res = (settings.resolution, settings.resolution)
    cams = []
    for up in (up0, side, -up0, -side):  # exact 90-degree steps
        cams.append(Camera(eye=eye.copy(), target=target.copy(), up=up,
                           fov_y=np.deg2rad(settings.fov_y_deg),
                           resolution=res,
                           near=settings.near_factor * radius,
                           far=settings.far_factor * radius))
    return cams


def camera_for_viewpoint(viewpoint, mesh, settings: RenderSettings) -> Camera:
    """Rotation-0 camera, used for coverage rasterization."""
    return make_cameras(viewpoint, mesh, settings)[0]


# ---------------------------------------------------------------------------
# geometry preparation

def _eye_space(vertices: np.ndarray, cam: Camera) -> np.ndarray:
    right, up, fwd = cam.basis()
    rel = vertices - cam.eye
    return rel @ np.stack([right, up, fwd], axis=1)


def _clip_near(tris: np.ndarray, ids: np.ndarray, near: float):
    """Clip triangles (T, 3, 3) in eye space against z = near.

    Returns (tris, ids) where crossing triangles are replaced by one or
    two clipped triangles referencing the same source face.
    """
    z = tris[:, :, 2]
    inside = z > near
    count = inside.sum(axis=1)
    keep = count == 3
    crossing = (count == 1) | (count == 2)
    out_tris = [tris[keep]]
    out_ids = [ids[keep]]
    extra_tris = []
    extra_ids = []
    for t in np.flatnonzero(crossing):
        tri = tris[t]
        ins = inside[t]
        poly = []
        for k in range(3):
            a, b = tri[k], tri[(k + 1) % 3]
            if ins[k]:
                poly.append(a)
            if ins[k] != ins[(k + 1) % 3]:
                lam = (near - a[2]) / (b[2] - a[2])
                poly.append(a + lam * (b - a))
        for k in range(1, len(poly) - 1):
            extra_tris.append((poly[0], poly[k], poly[k + 1]))
            extra_ids.append(ids[t])
    if extra_tris:
        out_tris.append(np.asarray(extra_tris))
        out_ids.append(np.asarray(extra_ids, dtype=ids.dtype))
    return np.concatenate(out_tris), np.concatenate(out_ids)


def _pixel_centers_ndc(n: int) -> np.ndarray:
    # (2i + 1 - n) / n: exact sign symmetry so that 180-degree camera
    # rotations produce bit-identical mirrored images
    return (2.0 * np.arange(n) + 1.0 - n) / n


# ---------------------------------------------------------------------------
# core rasterization

def _raster_fragments(tris, ids, cam: Camera, pair_budget: int,
                      need_attrs: bool = True):
    """Z-buffer resolve.  Returns per-pixel winner arrays:

    zwin    (H*W,) float32 eye depth, inf where empty
    idwin   (H*W,) int32 face id, -1 where empty
    bary    (H*W, 3) float64 perspective-correct barycentric weights
    tri_pts (H*W, 3, 3) eye-space corners of the winning triangle

    With ``need_attrs=False`` only the depth buffer is resolved (the
    other returns are None); this is the fast path for visibility
    estimates.

    Edge functions are evaluated in pixel coordinates centered on the
    image so that negating a projected vertex lands exactly on the
    mirrored pixel grid; this is what makes 180-degree-rotated camera
    pairs render to bit-identical rotated images.  Depth ties resolve to
    the lowest triangle index.
    """
    W, H = cam.resolution
    tan_y = np.tan(0.5 * cam.fov_y)
    tan_x = tan_y * (W / H)
    cxo = (W - 1.0) * 0.5  # center offsets, exactly representable
    cyo = (H - 1.0) * 0.5

    npix = W * H
    zwin = np.full(npix, np.inf, dtype=np.float32)
    if not need_attrs:
        idwin = bary = tri_pts = None
    else:
        idwin = np.full(npix, -1, dtype=np.int32)
        bary = np.zeros((npix, 3))
        tri_pts = np.zeros((npix, 3, 3))
    if tris.shape[0] == 0:
        return zwin, idwin, bary, tri_pts

    z64 = tris[:, :, 2]
    # project in float64, then run the per-pixel math in float32; the
    # cast preserves the sign symmetry rotation pairs rely on
    px = (tris[:, :, 0] / (z64 * tan_x) * (0.5 * W)).astype(np.float32)
    py = (-(tris[:, :, 1] / (z64 * tan_y)) * (0.5 * H)).astype(np.float32)
    z = z64.astype(np.float32)
    invz_v = (1.0 / z64).astype(np.float32)

    x0 = np.clip(np.ceil(px.min(axis=1) + cxo), 0, W - 1).astype(np.int32)
    x1 = np.clip(np.floor(px.max(axis=1) + cxo), 0, W - 1).astype(np.int32)
    y0 = np.clip(np.ceil(py.min(axis=1) + cyo), 0, H - 1).astype(np.int32)
    y1 = np.clip(np.floor(py.max(axis=1) + cyo), 0, H - 1).astype(np.int32)
    bw = (x1 - x0 + 1).astype(np.int64)
    bh = (y1 - y0 + 1).astype(np.int64)
    area2 = ((px[:, 1] - px[:, 0]) * (py[:, 2] - py[:, 0])
             - (py[:, 1] - py[:, 0]) * (px[:, 2] - px[:, 0]))
    valid = ((px.max(axis=1) >= -cxo - 0.5) & (px.min(axis=1) <= cxo + 0.5)
             & (py.max(axis=1) >= -cyo - 0.5) & (py.min(axis=1) <= cyo + 0.5)
             & (x1 >= x0) & (y1 >= y0) & (np.abs(area2) > 1e-12))
    order = np.flatnonzero(valid)
    if order.size == 0:
        return zwin, idwin, bary, tri_pts

    counts = bw[order] * bh[order]
    csum = np.cumsum(counts)
    chunk_ends = []
    start = 0
    base = 0
    for t in range(order.size):
        if csum[t] - base > pair_budget and t > start:
            chunk_ends.append(t)
            base = csum[t - 1]
            start = t
    chunk_ends.append(order.size)

    best_key = np.full(npix, np.iinfo(np.uint64).max, dtype=np.uint64)
    fragments = []  # (pix, key, tri) per chunk
    start = 0
    for end in chunk_ends:
        sel = order[start:end]
        start = end
        # two-level ragged enumeration (rows, then columns) avoids any
        # integer division over the pair arrays
        bh_s = bh[sel]
        nrows = int(bh_s.sum())
        if nrows == 0:
            continue
        row_tri = np.repeat(np.arange(sel.size), bh_s)
        row_start = np.concatenate([[0], np.cumsum(bh_s)[:-1]])
        row_y = (y0[sel][row_tri]
                 + (np.arange(nrows) - np.repeat(row_start, bh_s)))
        bw_row = bw[sel][row_tri]
        total = int(bw_row.sum())
        pair_row = np.repeat(np.arange(nrows), bw_row)
        col_start = np.concatenate([[0], np.cumsum(bw_row)[:-1]])
        tsel = row_tri[pair_row]
        pxs = (x0[sel][tsel]
               + (np.arange(total) - np.repeat(col_start, bw_row)))
        pys = row_y[pair_row]
        gx = pxs.astype(np.float32) - np.float32(cxo)
        gy = pys.astype(np.float32) - np.float32(cyo)

        # chunk-local per-triangle coordinate gathers (1D, cheap)
        axs, ays = px[sel, 0][tsel], py[sel, 0][tsel]
        bxs, bys = px[sel, 1][tsel], py[sel, 1][tsel]
        cxs, cys = px[sel, 2][tsel], py[sel, 2][tsel]
        e0 = (cxs - bxs) * (gy - bys) - (cys - bys) * (gx - bxs)  # opp. A
        e1 = (axs - cxs) * (gy - cys) - (ays - cys) * (gx - cxs)  # opp. B
        e2 = (bxs - axs) * (gy - ays) - (bys - ays) * (gx - axs)  # opp. C
        sign = np.sign(area2[sel])[tsel]
        inside = (e0 * sign >= 0) & (e1 * sign >= 0) & (e2 * sign >= 0)
        if not inside.any():
            continue
        tsel = tsel[inside]
        t_in = sel[tsel]
        pix = pys[inside] * W + pxs[inside]
        inv_a2 = (1.0 / area2[sel])[tsel]
        l0 = e0[inside] * inv_a2
        l1 = e1[inside] * inv_a2
        l2 = e2[inside] * inv_a2
        invz = (l0 * invz_v[sel, 0][tsel] + l1 * invz_v[sel, 1][tsel]
                + l2 * invz_v[sel, 2][tsel])
        depth = 1.0 / invz
        if not need_attrs:
            np.minimum.at(zwin, pix, depth)
            continue
        key = (depth.view(np.uint32).astype(np.uint64) << np.uint64(32)) \
            | t_in.astype(np.uint64)
        np.minimum.at(best_key, pix, key)
        fragments.append((pix, key, t_in))

    for pix, key, t_in in fragments:
        winner = key == best_key[pix]
        if not winner.any():
            continue
        wpix = pix[winner]
        wtri = t_in[winner]
        zwin[wpix] = (key[winner] >> np.uint64(32)).astype(np.uint32) \
            .view(np.float32)
        idwin[wpix] = ids[wtri]
        # recompute screen barycentrics for winners only, then convert to
        # perspective-correct attribute weights
        gx = wpix % W - cxo
        gy = wpix // W - cyo
        ax, ay = px[wtri, 0], py[wtri, 0]
        bx, by = px[wtri, 1], py[wtri, 1]
        cx, cy = px[wtri, 2], py[wtri, 2]
        a2 = area2[wtri]
        l0 = ((cx - bx) * (gy - by) - (cy - by) * (gx - bx)) / a2
        l1 = ((ax - cx) * (gy - cy) - (ay - cy) * (gx - cx)) / a2
        l2 = ((bx - ax) * (gy - ay) - (by - ay) * (gx - ax)) / a2
        lw = np.stack([l0, l1, l2], axis=1) / z[wtri]
        lw = lw / lw.sum(axis=1, keepdims=True)
        bary[wpix] = lw
        tri_pts[wpix] = tris[wtri]
    return zwin, idwin, bary, tri_pts


def _silhouette_keep(depth_img: np.ndarray, occupied: np.ndarray,
                     radius: int, tol: float) -> np.ndarray:
    """True for pixels whose whole (2r+1)^2 neighborhood is occupied and
    within ``tol`` normalized depth of the pixel itself."""
    if radius <= 0:
        return occupied.copy()
    H, W = depth_img.shape
    pad = np.pad(depth_img, radius, mode="constant", constant_values=1.0)
    occ = np.pad(occupied, radius, mode="constant", constant_values=False)
    win_d = np.lib.stride_tricks.sliding_window_view(
        pad, (2 * radius + 1, 2 * radius + 1))
    win_o = np.lib.stride_tricks.sliding_window_view(
        occ, (2 * radius + 1, 2 * radius + 1))
    all_occ = win_o.all(axis=(2, 3))
    dmax = win_d.max(axis=(2, 3))
    dmin = win_d.min(axis=(2, 3))
    jump = np.maximum(dmax - depth_img, depth_img - dmin)
    return occupied & all_occ & (jump <= tol)


def rasterize(mesh, cam: Camera, settings: RenderSettings,
              view_id: int = 0) -> RenderedView:
    """Render one view: Phong-shaded grayscale, linear depth, face
    reference image, and optionally a world-height channel."""
    W, H = cam.resolution
    pcam = _eye_space(mesh.vertices, cam)
    tris = pcam[mesh.faces]
    ids = np.arange(mesh.num_faces, dtype=np.int32)
    tris, ids = _clip_near(tris, ids, cam.near)
    zwin, idwin, bary, tri_pts = _raster_fragments(
        tris, ids, cam, settings.pair_budget)

    occupied = np.isfinite(zwin)
    depth = np.ones(W * H, dtype=np.float32)
    depth[occupied] = np.clip(
        (zwin[occupied] - cam.near) / (cam.far - cam.near), 0.0, 1.0)

    shaded = np.zeros(W * H, dtype=np.float32)
    height = np.zeros(W * H, dtype=np.float32) if settings.upright_height else None
    if occupied.any():
        right, up, fwd = cam.basis()
        basis = np.stack([right, up, fwd], axis=0)
        pts_eye = (bary[occupied, :, None] * tri_pts[occupied]).sum(axis=1)
        pts_world = cam.eye + pts_eye @ basis
        n = mesh.face_normals[idwin[occupied]]
        l = cam.eye - pts_world
        l = l / np.linalg.norm(l, axis=1, keepdims=True)
        ndotl = (n * l).sum(axis=1)
        lit = ndotl > 0.0
        diffuse = settings.diffuse * np.maximum(0.0, ndotl)
        rdotv = 2.0 * ndotl * ndotl - 1.0  # reflected headlight: r.v
        spec = np.where(lit,
                        settings.specular
                        * np.maximum(0.0, rdotv) ** settings.shininess,
                        0.0)
        shaded[occupied] = np.clip(settings.ambient + diffuse + spec,
                                   0.0, 1.0).astype(np.float32)
        if height is not None:
            ymin = mesh.vertices[:, 1].min()
            ymax = mesh.vertices[:, 1].max()
            span = max(ymax - ymin, 1e-12)
            height[occupied] = np.clip(
                (pts_world[:, 1] - ymin) / span, 0.0, 1.0).astype(np.float32)

    depth = depth.reshape(H, W)
    shaded = shaded.reshape(H, W)
    reference = idwin.reshape(H, W).copy()
    keep = _silhouette_keep(depth, occupied.reshape(H, W),
                            settings.silhouette_radius,
                            settings.silhouette_depth_tol)
    reference[~keep] = -1
    return RenderedView(
        shaded=shaded, depth=depth, reference=reference, camera=cam,
        view_id=view_id,
        height=height.reshape(H, W) if height is not None else None)


def render_depth(mesh, cam: Camera, settings: RenderSettings) -> np.ndarray:
    """Raw eye-space depth buffer (H, W); inf where empty.  This is the
    binary rasterization used for visibility estimates."""
    pcam = _eye_space(mesh.vertices, cam)
    tris = pcam[mesh.faces]
    ids = np.arange(mesh.num_faces, dtype=np.int32)
    tris, ids = _clip_near(tris, ids, cam.near)
    zwin, _, _, _ = _raster_fragments(tris, ids, cam, settings.pair_budget,
                                      need_attrs=False)
    W, H = cam.resolution
    return zwin.reshape(H, W)


def project_points(cam: Camera, points: np.ndarray):
    """Project world points to (pixel x, pixel y, eye depth)."""
    W, H = cam.resolution
    tan_y = np.tan(0.5 * cam.fov_y)
    tan_x = tan_y * (W / H)
    pc = _eye_space(points, cam)
    z = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        xn = pc[:, 0] / (z * tan_x)
        yn = pc[:, 1] / (z * tan_y)
    px = (xn * W + (W - 1.0)) * 0.5
    py = ((-yn) * H + (H - 1.0)) * 0.5
    return px, py, z


def render_views(mesh, viewpoint_set, settings: RenderSettings):
    """Render 4 in-plane rotations for every selected viewpoint.

    View IDs follow (viewpoint order x rotation index); downstream code
    must not rely on the ordering.
    """
    views = []
    for vi, vp in enumerate(viewpoint_set.selected):
        cams = make_cameras(vp, mesh, settings)
        for k, cam in enumerate(cams):
            views.append(rasterize(mesh, cam, settings, view_id=4 * vi + k))
    return views
