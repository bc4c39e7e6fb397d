"""Image-to-surface projection: pool per-pixel label confidences onto
mesh faces across all views, and route gradients back to the pixels.

For every face f and label l the pooled confidence is the maximum (or
mean) of C(m, i, j, l) over all pixels (m, i, j) whose reference image
entry is f.  Faces never referenced by any pixel are marked unobserved
and get zero confidences.  Max pooling records its argmax pixel per
(f, l) so the backward pass can deposit the surface gradient there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ConfidenceStack:
    """Per-view confidence maps plus matching reference images."""

    confidences: np.ndarray  # (M, H, W, L)
    references: np.ndarray   # (M, H, W) int32, -1 = no face

    def __post_init__(self):
        if self.confidences.shape[:3] != self.references.shape:
            raise ValueError("confidence/reference shapes disagree")

    @property
    def num_labels(self) -> int:
        return int(self.confidences.shape[3])


@dataclass(frozen=True)
class SurfaceConfidences:
    values: np.ndarray    # (F, L)
    observed: np.ndarray  # (F,) bool

    @property
    def num_faces(self) -> int:
        return int(self.values.shape[0])

    @property
    def num_labels(self) -> int:
        return int(self.values.shape[1])


def _flat_valid(stack: ConfidenceStack):
    refs = stack.references.reshape(-1)
    valid = np.flatnonzero(refs >= 0)
    faces = refs[valid].astype(np.int64)
    vals = stack.confidences.reshape(-1, stack.num_labels)[valid]
    return valid, faces, vals


def project_max(stack: ConfidenceStack, num_faces: int):
    """View pooling by maximum.

    Returns (SurfaceConfidences, argmax) where argmax is (F, L) int64
    flat indices into the (M, H, W) pixel grid (-1 for unobserved faces).
    Ties go to the lowest (m, i, j) in lexicographic order.
    """
    L = stack.num_labels
    if stack.references.size and stack.references.max() >= num_faces:
        raise ValueError("reference image contains a face id >= num_faces")
    valid, faces, vals = _flat_valid(stack)
    values = np.full((num_faces, L), -np.inf)
    observed = np.zeros(num_faces, dtype=bool)
    argmax = np.full((num_faces, L), np.iinfo(np.int64).max, dtype=np.int64)
    if valid.size:
        observed[faces] = True
        np.maximum.at(values, faces, vals)
        for l in range(L):
            hit = vals[:, l] == values[faces, l]
            np.minimum.at(argmax[:, l], faces[hit], valid[hit])
    values[~observed] = 0.0
    argmax[~observed] = -1
    return SurfaceConfidences(values=values, observed=observed), argmax


def project_mean(stack: ConfidenceStack, num_faces: int) -> SurfaceConfidences:
    """View pooling by arithmetic mean over referencing pixels."""
    L = stack.num_labels
    if stack.references.size and stack.references.max() >= num_faces:
        raise ValueError("reference image contains a face id >= num_faces")
    _, faces, vals = _flat_valid(stack)
    sums = np.zeros((num_faces, L))
    counts = np.bincount(faces, minlength=num_faces).astype(np.float64)
    np.add.at(sums, faces, vals)
    observed = counts > 0
    values = np.zeros((num_faces, L))
    values[observed] = sums[observed] / counts[observed, None]
    return SurfaceConfidences(values=values, observed=observed)


def backward_project(grad_surface: np.ndarray, argmax: np.ndarray,
                     stack_shape) -> np.ndarray:
    """Route per-face gradients to the recorded argmax pixels.

    grad_surface (F, L) -> grad stack (M, H, W, L); every other entry is
    zero.  Raises when the argmax indices do not fit the stack shape.
    """
    M, H, W, L = stack_shape
    if grad_surface.shape != argmax.shape:
        raise ValueError("gradient and argmax shapes disagree")
    if argmax.size and argmax.max() >= M * H * W:
        raise ValueError("stale argmax indices for this stack shape")
    grad = np.zeros((M * H * W, L))
    f_idx, l_idx = np.nonzero(argmax >= 0)
    grad[argmax[f_idx, l_idx], l_idx] = grad_surface[f_idx, l_idx]
    return grad.reshape(M, H, W, L)


def sequential_max(per_view_values, per_view_observed, num_faces: int,
                   num_labels: int) -> SurfaceConfidences:
    """Fold per-view pooled confidences into the all-view pooling.

    Because max is associative, projecting views one at a time and
    combining with a running elementwise max equals batch projection.
    ``per_view_values`` iterates (F, L) arrays with matching (F,) masks.
    """
    values = np.full((num_faces, num_labels), -np.inf)
    observed = np.zeros(num_faces, dtype=bool)
    for vals, obs in zip(per_view_values, per_view_observed):
        values[obs] = np.maximum(values[obs], vals[obs])
        observed |= obs
    values[~observed] = 0.0
    return SurfaceConfidences(values=values, observed=observed)
