"""Surface CRF over face labels with mean-field inference.

Each face f carries a label variable R_f.  The model is log-linear:

  unary           log phi_u(R_f = l)       = U(f, l)   (pooled confidences)
  edge adjacency  log phi_a(l, l')         = -w_adj  * w_label(l,l') * s
  surface nearby  log phi_d(l, l')         = -w_dist * w_label(l,l') * s

with s = x^2 for l == l' and s = 1 - x^2 for l != l', where x is the
normal angle over pi for adjacency pairs and the normalized geodesic
distance for proximity pairs.  Coplanar or coincident faces are pulled
toward equal labels; strongly bent or distant pairs toward differing
ones.  w_label is one shared symmetric matrix.

Inference approximates the posterior in fully factorized form: per-face
distributions Q_f are swept synchronously,

  Q_f(l) <- softmax( U(f, l) + sum_pairs sum_l' Q_f'(l') log phi(l, l') )

with damping (new = 0.5 old + 0.5 computed) for stable fixed points on
dense graphs.  Gradient helpers return ascent directions on the
mean-field surrogate log-likelihood (statistics at the ground truth
minus expectations under Q), which is exactly the derivative of
``surrogate_log_likelihood`` at a converged Q.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import PairwiseGraph
from .project import SurfaceConfidences


@dataclass
class CrfParams:
    w_adj: float
    w_dist: float
    w_label: np.ndarray  # (L, L) symmetric, nonnegative

    @staticmethod
    def initial(num_labels: int) -> "CrfParams":
        """All weights start at 1."""
        return CrfParams(w_adj=1.0, w_dist=1.0,
                         w_label=np.ones((num_labels, num_labels)))

    def validate(self):
        if self.w_adj < 0 or self.w_dist < 0 or (self.w_label < 0).any():
            raise ValueError("CRF weights must be nonnegative")
        if not np.allclose(self.w_label, self.w_label.T):
            raise ValueError("w_label must be symmetric")

    def copy(self) -> "CrfParams":
        return CrfParams(self.w_adj, self.w_dist, self.w_label.copy())


@dataclass(frozen=True)
class Marginals:
    q: np.ndarray  # (F, L) rows nonnegative, each summing to 1


def _unary_array(unary) -> np.ndarray:
    if isinstance(unary, SurfaceConfidences):
        return np.asarray(unary.values, dtype=np.float64)
    return np.asarray(unary, dtype=np.float64)


def _pair_coeffs(x: np.ndarray):
    """Per-pair (same-label, different-label) exponent scales."""
    same = x * x
    return same, 1.0 - same


def log_factors(params: CrfParams, graph: PairwiseGraph, num_labels: int):
    """Explicit (K, L, L) log-factor tables for the adjacency and the
    distance pair lists (reference form; inference uses a decomposition)."""
    eye = np.eye(num_labels, dtype=bool)

    def tables(x, w):
        same, diff = _pair_coeffs(x)
        s = np.where(eye[None, :, :], same[:, None, None],
                     diff[:, None, None])
        return -w * params.w_label[None, :, :] * s

    return (tables(graph.adjacency_omega, params.w_adj),
            tables(graph.distance_values, params.w_dist))


def _pair_messages(q, pairs, x, w, w_label, out):
    """Accumulate sum_l' Q_j(l') log phi(l, l') into out[i] (and the
    symmetric term into out[j]) for every pair (i, j)."""
    if pairs.shape[0] == 0:
        return
    same, diff = _pair_coeffs(x)
    dw = np.diag(w_label)
    qi = q[pairs[:, 0]]
    qj = q[pairs[:, 1]]
    sd = (same - diff)[:, None]
    to_i = -w * (diff[:, None] * (qj @ w_label) + sd * (dw[None, :] * qj))
    to_j = -w * (diff[:, None] * (qi @ w_label) + sd * (dw[None, :] * qi))
    np.add.at(out, pairs[:, 0], to_i)
    np.add.at(out, pairs[:, 1], to_j)


def _softmax_rows(s: np.ndarray) -> np.ndarray:
    e = np.exp(s - s.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def mean_field(unary, graph: PairwiseGraph, params: CrfParams,
               iters: int = 20, tol: float = 1e-4, damping: float = 0.5,
               return_info: bool = False):
    """Damped synchronous mean-field sweeps from Q = softmax(unary).

    Stops after ``iters`` sweeps or when the largest marginal change in a
    sweep drops below ``tol``.
    """
    u = _unary_array(unary)
    q = _softmax_rows(u)
    info = {"iterations": 0, "converged": graph.num_adjacency == 0
            and graph.num_distance == 0, "max_delta": 0.0}
    for it in range(iters):
        msg = np.zeros_like(u)
        _pair_messages(q, graph.adjacency_pairs, graph.adjacency_omega,
                       params.w_adj, params.w_label, msg)
        _pair_messages(q, graph.distance_pairs, graph.distance_values,
                       params.w_dist, params.w_label, msg)
        q_new = damping * q + (1.0 - damping) * _softmax_rows(u + msg)
        q_new /= q_new.sum(axis=1, keepdims=True)
        delta = float(np.abs(q_new - q).max())
        q = q_new
        info["iterations"] = it + 1
        info["max_delta"] = delta
        if delta < tol:
            info["converged"] = True
            break
    marg = Marginals(q=q)
    return (marg, info) if return_info else marg


def map_labeling(marginals: Marginals) -> np.ndarray:
    """Per-face argmax of the marginals; ties go to the lowest label."""
    return np.argmax(marginals.q, axis=1).astype(np.int32)


# ---------------------------------------------------------------------------
# energies and the training objective

def _pair_expectation(q, pairs, x, w, w_label, labels=None):
    """sum over pairs of E[log phi] under Q (or log phi at ``labels``)."""
    if pairs.shape[0] == 0:
        return 0.0
    same, diff = _pair_coeffs(x)
    if labels is not None:
        wl = w_label[labels[pairs[:, 0]], labels[pairs[:, 1]]]
        s = np.where(labels[pairs[:, 0]] == labels[pairs[:, 1]], same, diff)
        return float(-w * (wl * s).sum())
    qi = q[pairs[:, 0]]
    qj = q[pairs[:, 1]]
    dw = np.diag(w_label)
    cross = np.einsum("kl,lm,km->k", qi, w_label, qj)
    diag = (qi * qj) @ dw
    return float(-w * (diff * cross + (same - diff) * diag).sum())


def free_energy(q: np.ndarray, unary, graph: PairwiseGraph,
                params: CrfParams) -> float:
    """Mean-field free energy: expected energy minus entropy.  The damped
    sweeps drive this downward; -free_energy lower-bounds log Z."""
    u = _unary_array(unary)
    e_unary = float((q * u).sum())
    e_pairs = (_pair_expectation(q, graph.adjacency_pairs,
                                 graph.adjacency_omega, params.w_adj,
                                 params.w_label)
               + _pair_expectation(q, graph.distance_pairs,
                                   graph.distance_values, params.w_dist,
                                   params.w_label))
    with np.errstate(divide="ignore", invalid="ignore"):
        logq = np.where(q > 0, np.log(np.maximum(q, 1e-300)), 0.0)
    entropy = float(-(q * logq).sum())
    return -(e_unary + e_pairs) - entropy


def labeling_score(labels, unary, graph: PairwiseGraph,
                   params: CrfParams) -> float:
    """Unnormalized log-probability of a full labeling."""
    u = _unary_array(unary)
    labels = np.asarray(labels)
    s = float(u[np.arange(len(labels)), labels].sum())
    s += _pair_expectation(None, graph.adjacency_pairs,
                           graph.adjacency_omega, params.w_adj,
                           params.w_label, labels=labels)
    s += _pair_expectation(None, graph.distance_pairs,
                           graph.distance_values, params.w_dist,
                           params.w_label, labels=labels)
    return s


def surrogate_log_likelihood(unary, graph: PairwiseGraph, params: CrfParams,
                             labels, q: np.ndarray | None = None,
                             iters: int = 200, tol: float = 1e-10) -> float:
    """log P(labels) with log Z replaced by the mean-field bound
    -free_energy(Q*).  The weight/unary gradient helpers differentiate
    exactly this quantity at a converged Q*."""
    if q is None:
        q = mean_field(unary, graph, params, iters=iters, tol=tol).q
    return labeling_score(labels, unary, graph, params) \
        - (-free_energy(q, unary, graph, params))


# ---------------------------------------------------------------------------
# gradients (ascent direction on the surrogate log-likelihood)

def surface_unary_gradient(marginals: Marginals, ground_truth,
                           observed) -> np.ndarray:
    """d surrogate / d unary(f, l): one-hot(truth) minus Q, zero for
    unobserved faces (their confidences are pinned at zero)."""
    q = marginals.q
    truth = np.asarray(ground_truth)
    grad = -q.copy()
    grad[np.arange(q.shape[0]), truth] += 1.0
    grad[~np.asarray(observed, dtype=bool)] = 0.0
    return grad


def unary_gradient(marginals: Marginals, ground_truth, observed,
                   argmax: np.ndarray, stack_shape) -> np.ndarray:
    """Surface gradient routed to the pixels that produced each pooled
    maximum; all other pixels receive zero."""
    from .project import backward_project
    grad = surface_unary_gradient(marginals, ground_truth, observed)
    return backward_project(grad, argmax, stack_shape)


def weight_gradients(marginals: Marginals, ground_truth,
                     graph: PairwiseGraph, params: CrfParams):
    """Ascent gradients for (w_adj, w_dist, w_label).

    For a log-linear weight the derivative is the sufficient statistic at
    the ground truth minus its expectation, with pairwise expectations
    factorized as Q_i(l) Q_j(l') under the mean-field posterior.  The
    chain rule through w * w_label(l, l') makes each pair contribute to
    both the factor weight and the shared label matrix; (l, l') and
    (l', l) accumulate into one symmetric parameter.
    """
    q = marginals.q
    L = q.shape[1]
    truth = np.asarray(ground_truth)

    def one_list(pairs, x, w):
        if pairs.shape[0] == 0:
            return 0.0, np.zeros((L, L))
        same, diff = _pair_coeffs(x)
        qi = q[pairs[:, 0]]
        qj = q[pairs[:, 1]]
        ti = truth[pairs[:, 0]]
        tj = truth[pairs[:, 1]]
        dw = np.diag(params.w_label)

        # d/dw: -w_label * s summed over pairs, expectation minus truth
        cross = np.einsum("kl,lm,km->k", qi, params.w_label, qj)
        diag = (qi * qj) @ dw
        exp_stat = (diff * cross + (same - diff) * diag)
        true_stat = params.w_label[ti, tj] * np.where(ti == tj, same, diff)
        g_w = float(exp_stat.sum() - true_stat.sum())

        # d/dw_label(l, l'): -w * s per pair at the matching cells
        d = np.zeros((L, L))
        d += np.einsum("k,kl,km->lm", diff, qi, qj)
        d[np.diag_indices(L)] += np.einsum("k,kl,kl->l", same - diff, qi, qj)
        np.add.at(d, (ti, tj),
                  -np.where(ti == tj, same, diff))
        d *= w
        g_label = d + d.T
        g_label[np.diag_indices(L)] = np.diag(d)
        return g_w, g_label

    g_adj, g_label_a = one_list(graph.adjacency_pairs,
                                graph.adjacency_omega, params.w_adj)
    g_dist, g_label_d = one_list(graph.distance_pairs,
                                 graph.distance_values, params.w_dist)
    return g_adj, g_dist, g_label_a + g_label_d
