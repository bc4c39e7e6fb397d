"""Adaptive viewpoint generation and greedy coverage-based selection.

Candidate viewpoints sit along the surface normal of every sampled point
at three distances (0.5, 1.0 and 1.5 bounding-sphere radii).  For each
scale independently, viewpoints are picked greedily by how many not yet
covered sample points they make visible, until the coverage target, a
zero marginal gain, or the per-scale cap is reached.  A fixed
dodecahedron rig is provided as the non-adaptive baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import Mesh, SampledPointSet
from .render import (RenderSettings, camera_for_viewpoint, project_points,
                     render_depth)

SCALE_FACTORS = (0.5, 1.0, 1.5)

# slack for the shadow-map style depth test, fraction of the [near, far]
# depth range; absorbs interpolation error at grazing angles
VISIBILITY_DEPTH_TOL = 0.0075


@dataclass(frozen=True)
class Viewpoint:
    eye: np.ndarray
    target: np.ndarray
    scale_index: int
    coverage: float = 0.0


@dataclass(frozen=True)
class ViewpointSet:
    selected: tuple
    covered_fraction_per_scale: np.ndarray = field(
        default_factory=lambda: np.zeros(len(SCALE_FACTORS)))

    def __len__(self):
        return len(self.selected)


def generate_candidates(points: SampledPointSet, mesh: Mesh):
    """One candidate per sampled point per scale; candidate index is
    scale-major (scale s, point p -> s * n + p)."""
    if points.count == 0:
        raise ValueError("empty sample point set")
    out = []
    radius = mesh.radius
    for s, factor in enumerate(SCALE_FACTORS):
        eyes = points.positions + points.normals * (factor * radius)
        for p in range(points.count):
            out.append(Viewpoint(eye=eyes[p], target=points.positions[p],
                                 scale_index=s))
    return out


def point_reference_mask(candidate: Viewpoint, points: SampledPointSet,
                         mesh: Mesh, settings: RenderSettings,
                         depth_tol: float = VISIBILITY_DEPTH_TOL) -> np.ndarray:
    """Boolean mask of sample points referenced from the candidate.

    The shape is rasterized to a binary/depth buffer; every occupied
    pixel is associated with the sample point closest to it in the image
    among points that pass the depth test at that pixel (nearest first,
    a few fallbacks).  A point is referenced when at least one pixel
    maps to it.
    """
    from scipy.spatial import cKDTree

    cam = camera_for_viewpoint(candidate, mesh, settings)
    zbuf = render_depth(mesh, cam, settings)
    H, W = zbuf.shape
    px, py, z = project_points(cam, points.positions)
    infront = z > cam.near
    mask = np.zeros(points.count, dtype=bool)
    if not infront.any():
        return mask
    cand_idx = np.flatnonzero(infront)
    tree = cKDTree(np.stack([px[cand_idx], py[cand_idx]], axis=1))
    on_y, on_x = np.nonzero(np.isfinite(zbuf))
    if on_y.size == 0:
        return mask
    tol = depth_tol * (cam.far - cam.near)
    zpix = zbuf[on_y, on_x]
    k = min(3, cand_idx.size)
    _, nn = tree.query(np.stack([on_x, on_y], axis=1).astype(np.float64),
                       k=k)
    nn = nn.reshape(on_y.size, k)
    taken = np.zeros(on_y.size, dtype=bool)
    for col in range(k):
        pt = cand_idx[nn[:, col]]
        passes = ~taken & (z[pt] <= zpix + tol)
        mask[pt[passes]] = True
        taken |= passes
    return mask


def estimate_coverage(candidate: Viewpoint, points: SampledPointSet,
                      uncovered: np.ndarray | None, mesh: Mesh,
                      settings: RenderSettings) -> float:
    """Fraction of the uncovered points referenced from the candidate."""
    refs = point_reference_mask(candidate, points, mesh, settings)
    if uncovered is None:
        uncovered = np.ones(points.count, dtype=bool)
    denom = int(uncovered.sum())
    if denom == 0:
        return 0.0
    return float((refs & uncovered).sum() / denom)


def greedy_select(candidates, points: SampledPointSet, mesh: Mesh,
                  settings: RenderSettings, coverage_target: float = 1.0,
                  max_per_scale: int = 40) -> ViewpointSet:
    """Greedy maximum-coverage selection, run per scale independently.

    Reference masks are computed once per candidate; the greedy loop then
    repeatedly takes the candidate covering the most uncovered points
    (ties to the lowest candidate index) until the target coverage, a
    zero gain, or ``max_per_scale``.
    """
    n = points.count
    selected = []
    covered_fraction = np.zeros(len(SCALE_FACTORS))
    for s in range(len(SCALE_FACTORS)):
        scale_cands = [(i, c) for i, c in enumerate(candidates)
                       if c.scale_index == s]
        if not scale_cands:
            continue
        refmat = np.stack([
            point_reference_mask(c, points, mesh, settings)
            for _, c in scale_cands])
        uncovered = np.ones(n, dtype=bool)
        picks = []
        while len(picks) < max_per_scale:
            if 1.0 - uncovered.mean() >= coverage_target:
                break
            gains = (refmat & uncovered).sum(axis=1)
            best = int(np.argmax(gains))  # first max = lowest index
            if gains[best] == 0:
                break
            frac = float(gains[best] / uncovered.sum())
            base = scale_cands[best][1]
            picks.append(Viewpoint(eye=base.eye, target=base.target,
                                   scale_index=s, coverage=frac))
            uncovered &= ~refmat[best]
        covered_fraction[s] = 1.0 - uncovered.mean()
        selected.extend(picks)
    return ViewpointSet(selected=tuple(selected),
                        covered_fraction_per_scale=covered_fraction)


def select_views(mesh: Mesh, points: SampledPointSet,
                 settings: RenderSettings, coverage_target: float = 1.0,
                 max_per_scale: int = 40) -> ViewpointSet:
    """Candidate generation plus greedy selection in one call."""
    candidates = generate_candidates(points, mesh)
    return greedy_select(candidates, points, mesh, settings,
                         coverage_target=coverage_target,
                         max_per_scale=max_per_scale)


_PHI = (1.0 + np.sqrt(5.0)) / 2.0
_DODECAHEDRON = np.array(
    [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]
    + [[0.0, sy / _PHI, sz * _PHI] for sy in (-1, 1) for sz in (-1, 1)]
    + [[sx / _PHI, sy * _PHI, 0.0] for sx in (-1, 1) for sy in (-1, 1)]
    + [[sx * _PHI, 0.0, sz / _PHI] for sx in (-1, 1) for sz in (-1, 1)],
    dtype=np.float64)


def fixed_dodecahedron_views(mesh: Mesh) -> ViewpointSet:
    """20 fixed viewpoints on dodecahedron vertices at 1.5 bounding
    radii, all looking at the sphere center (non-adaptive baseline)."""
    if mesh.num_faces == 0:
        raise ValueError("empty mesh")
    center, radius = mesh.bounding_sphere
    dirs = _DODECAHEDRON / np.linalg.norm(_DODECAHEDRON, axis=1, keepdims=True)
    eyes = center + dirs * (1.5 * radius)
    vps = tuple(Viewpoint(eye=e, target=center.copy(), scale_index=2)
                for e in eyes)
    return ViewpointSet(selected=vps)
