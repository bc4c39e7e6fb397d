"""End-to-end training of the unary network and the CRF weights.

Each optimization step takes one shape, samples a fresh random subset of
its rendered views, runs the network on every view, pools confidences
onto the surface, runs mean-field, and descends on the surrogate
negative log-likelihood plus an L2 penalty on the network parameters.
Surface gradients flow back through the pooling argmax pixels into the
network; CRF weight gradients come from the log-linear
statistic-minus-expectation form.  Modes:

  joint       network and CRF weights trained together (default)
  disjoint    network first (softmax loss), then CRF weights on the
              frozen network
  unary_only  no CRF; per-face softmax of pooled confidences
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import crf as crf_mod
from . import net as net_mod
from .crf import CrfParams, Marginals
from .mesh import Mesh, PairwiseGraph
from .project import (ConfidenceStack, SurfaceConfidences, backward_project,
                      project_max, sequential_max)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-3         # L2 penalty on network parameters
    views_per_model_per_batch: int = 24
    epochs: int = 30
    seed: int = 0
    mode: str = "joint"                # joint | disjoint | unary_only
    fixed_views: bool = False          # recorded for provenance
    mf_iters: int = 20
    mf_tol: float = 1e-4
    mf_damping: float = 0.5
    net_width: int = 16
    upright_height: bool = False
    crf_grad_norm: bool = True         # scale CRF grads by 1 / pair count
    disjoint_crf_epochs: int | None = None  # defaults to ``epochs``

    def __post_init__(self):
        if self.learning_rate <= 0 or self.momentum < 0:
            raise ValueError("rates must be positive")
        if self.views_per_model_per_batch < 1:
            raise ValueError("need at least one view per step")
        if self.mode not in ("joint", "disjoint", "unary_only"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class TrainShape:
    """One training shape: geometry, labels, pair graph, and a view
    accessor (lazy so large view sets stay on disk)."""

    shape_id: str
    category: str
    mesh: Mesh
    labels: np.ndarray
    graph: PairwiseGraph
    num_views: int
    get_view: object  # callable(view index) -> RenderedView


@dataclass
class TrainResult:
    net: net_mod.NetworkParams
    crf: CrfParams
    velocity: dict
    log: list = field(default_factory=list)  # (epoch, step, nll, reg, acc)
    seconds: float = 0.0


def view_input(view, upright: bool) -> np.ndarray:
    """Stack the rendered channels into the network input image."""
    channels = [view.shaded, view.depth]
    if upright:
        if view.height is None:
            raise ValueError("upright mode needs rendered height channels")
        channels.append(view.height)
    return np.stack(channels, axis=2).astype(np.float32)


def _new_velocity(params: net_mod.NetworkParams, num_labels: int) -> dict:
    return {"weights": [np.zeros_like(w) for w in params.weights],
            "biases": [np.zeros_like(b) for b in params.biases],
            "w_adj": 0.0, "w_dist": 0.0,
            "w_label": np.zeros((num_labels, num_labels))}


def _sgd_net_step(params, grads_w, grads_b, velocity, cfg: TrainConfig):
    """v <- momentum v + (g + 2 lambda theta); theta <- theta - lr v."""
    lam = cfg.weight_decay
    for w, g, v in zip(params.weights, grads_w, velocity["weights"]):
        v *= cfg.momentum
        v += g + 2.0 * lam * w
        w -= cfg.learning_rate * v
    for b, g, v in zip(params.biases, grads_b, velocity["biases"]):
        v *= cfg.momentum
        v += g + 2.0 * lam * b
        b -= cfg.learning_rate * v


def _sgd_crf_step(crf: CrfParams, g_adj, g_dist, g_label, velocity,
                  cfg: TrainConfig, num_pairs: int):
    """Descent step on the CRF weights (inputs are ascent gradients),
    followed by projection onto nonnegative weights."""
    scale = 1.0 / max(num_pairs, 1) if cfg.crf_grad_norm else 1.0
    velocity["w_adj"] = cfg.momentum * velocity["w_adj"] - scale * g_adj
    velocity["w_dist"] = cfg.momentum * velocity["w_dist"] - scale * g_dist
    velocity["w_label"] = (cfg.momentum * velocity["w_label"]
                           - scale * g_label)
    crf.w_adj = max(0.0, crf.w_adj - cfg.learning_rate * velocity["w_adj"])
    crf.w_dist = max(0.0, crf.w_dist - cfg.learning_rate * velocity["w_dist"])
    crf.w_label = np.maximum(
        0.0, crf.w_label - cfg.learning_rate * velocity["w_label"])


def _net_l2(params: net_mod.NetworkParams) -> float:
    total = 0.0
    for w in params.weights:
        total += float((w.astype(np.float64) ** 2).sum())
    for b in params.biases:
        total += float((b.astype(np.float64) ** 2).sum())
    return total


def _softmax_rows(v):
    e = np.exp(v - v.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def accuracy(mesh: Mesh, predicted, truth) -> float:
    """Area-weighted fraction of correctly labeled faces."""
    correct = np.asarray(predicted) == np.asarray(truth)
    return float((mesh.face_areas * correct).sum() / mesh.face_areas.sum())


def _posterior(surface: SurfaceConfidences, shape: TrainShape,
               crf: CrfParams | None, cfg: TrainConfig):
    """Marginals plus the data term of the loss for the current mode."""
    if crf is None:  # unary-only: per-face softmax over observed faces
        q = _softmax_rows(surface.values)
        obs = surface.observed
        nll = float(-np.log(np.maximum(
            q[obs][np.arange(obs.sum()), shape.labels[obs]], 1e-300)).sum())
        return Marginals(q=q), nll
    marg = crf_mod.mean_field(surface, shape.graph, crf, iters=cfg.mf_iters,
                              tol=cfg.mf_tol, damping=cfg.mf_damping)
    nll = -crf_mod.surrogate_log_likelihood(surface, shape.graph, crf,
                                            shape.labels, q=marg.q)
    return marg, nll


def train_step(params, crf, shape: TrainShape, view_ids, cfg: TrainConfig,
               velocity, update_net: bool = True, update_crf: bool = True):
    """One SGD step on one shape.  Returns (nll, reg, accuracy)."""
    views = [shape.get_view(i) for i in view_ids]
    outs = []
    caches = []
    for view in views:
        out, cache = net_mod.forward_cached(
            params, view_input(view, cfg.upright_height))
        outs.append(out)
        caches.append(cache)
    stack = ConfidenceStack(
        confidences=np.stack([o.astype(np.float64) for o in outs]),
        references=np.stack([v.reference for v in views]))
    surface, argmax = project_max(stack, shape.mesh.num_faces)
    use_crf = cfg.mode != "unary_only" and crf is not None
    marg, nll = _posterior(surface, shape, crf if use_crf else None, cfg)

    if update_net:
        grad_surface = crf_mod.surface_unary_gradient(
            marg, shape.labels, surface.observed)
        grad_stack = backward_project(-grad_surface, argmax,
                                      stack.confidences.shape)
        acc = net_mod.zero_grads(params)
        for cache, gview in zip(caches, grad_stack):
            gws, gbs, _ = net_mod.backward(params, cache,
                                           gview.astype(params.dtype))
            net_mod.accumulate_grads(acc, (gws, gbs))
        _sgd_net_step(params, acc[0], acc[1], velocity, cfg)

    if use_crf and update_crf:
        g_adj, g_dist, g_label = crf_mod.weight_gradients(
            marg, shape.labels, shape.graph, crf)
        npairs = shape.graph.num_adjacency + shape.graph.num_distance
        _sgd_crf_step(crf, g_adj, g_dist, g_label, velocity, cfg, npairs)

    reg = cfg.weight_decay * _net_l2(params)
    acc_val = accuracy(shape.mesh, crf_mod.map_labeling(marg), shape.labels)
    return nll, reg, acc_val


def _epoch_pass(shapes, params, crf, cfg, velocity, rng, log, epoch,
                update_net=True, update_crf=True):
    for step, shape in enumerate(shapes):
        k = min(cfg.views_per_model_per_batch, shape.num_views)
        ids = rng.choice(shape.num_views, size=k, replace=False)
        nll, reg, acc = train_step(params, crf, shape, ids, cfg, velocity,
                                   update_net=update_net,
                                   update_crf=update_crf)
        log.append((epoch, step, nll, reg, acc))


def train(shapes, cfg: TrainConfig,
          params: net_mod.NetworkParams | None = None,
          crf: CrfParams | None = None) -> TrainResult:
    """Run the configured training mode over the dataset."""
    if not shapes:
        raise ValueError("empty training set")
    t0 = time.perf_counter()
    num_labels = int(max(s.labels.max() for s in shapes)) + 1
    in_channels = 3 if cfg.upright_height else 2
    if params is None:
        params = net_mod.init_params(
            cfg.seed, net_mod.default_layers(in_channels, num_labels,
                                             cfg.net_width))
    if crf is None:
        crf = CrfParams.initial(num_labels)
    velocity = _new_velocity(params, num_labels)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x75EA]))
    log = []

    if cfg.mode == "disjoint":
        unary_cfg = replace(cfg, mode="unary_only")
        for epoch in range(cfg.epochs):
            _epoch_pass(shapes, params, None, unary_cfg, velocity, rng, log,
                        epoch)
        crf_epochs = cfg.disjoint_crf_epochs or cfg.epochs
        frozen = _FrozenUnaries(params, shapes, cfg)
        for epoch in range(cfg.epochs, cfg.epochs + crf_epochs):
            for step, shape in enumerate(shapes):
                k = min(cfg.views_per_model_per_batch, shape.num_views)
                ids = rng.choice(shape.num_views, size=k, replace=False)
                surface = frozen.pooled(shape, ids)
                marg, nll = _posterior(surface, shape, crf, cfg)
                g_adj, g_dist, g_label = crf_mod.weight_gradients(
                    marg, shape.labels, shape.graph, crf)
                npairs = (shape.graph.num_adjacency
                          + shape.graph.num_distance)
                _sgd_crf_step(crf, g_adj, g_dist, g_label, velocity, cfg,
                              npairs)
                reg = cfg.weight_decay * _net_l2(params)
                acc = accuracy(shape.mesh, crf_mod.map_labeling(marg),
                               shape.labels)
                log.append((epoch, step, nll, reg, acc))
    else:
        for epoch in range(cfg.epochs):
            _epoch_pass(shapes, params, crf, cfg, velocity, rng, log, epoch)

    return TrainResult(net=params, crf=crf, velocity=velocity, log=log,
                       seconds=time.perf_counter() - t0)


class _FrozenUnaries:
    """Per-view pooled confidences for a frozen network; any view subset
    then pools with a running max, identical to batch projection."""

    def __init__(self, params, shapes, cfg: TrainConfig):
        self.cache = {}
        for shape in shapes:
            per_view = []
            for i in range(shape.num_views):
                view = shape.get_view(i)
                out = net_mod.forward(params,
                                      view_input(view, cfg.upright_height))
                stack = ConfidenceStack(
                    confidences=out[None].astype(np.float64),
                    references=view.reference[None])
                surf, _ = project_max(stack, shape.mesh.num_faces)
                per_view.append(surf)
            self.cache[shape.shape_id] = per_view

    def pooled(self, shape, view_ids) -> SurfaceConfidences:
        per_view = self.cache[shape.shape_id]
        chosen = [per_view[i] for i in view_ids]
        return sequential_max([c.values for c in chosen],
                              [c.observed for c in chosen],
                              shape.mesh.num_faces,
                              per_view[0].num_labels)


def infer_shape(params, crf, shape: TrainShape, cfg: TrainConfig):
    """All-view inference: sequential per-view pooling, then mean-field
    (or plain softmax in unary-only mode).  Returns (labels, marginals,
    pooled confidences)."""
    per_vals = []
    per_obs = []
    num_labels = params.num_labels
    for i in range(shape.num_views):
        view = shape.get_view(i)
        out = net_mod.forward(params, view_input(view, cfg.upright_height))
        stack = ConfidenceStack(confidences=out[None].astype(np.float64),
                                references=view.reference[None])
        surf, _ = project_max(stack, shape.mesh.num_faces)
        per_vals.append(surf.values)
        per_obs.append(surf.observed)
    surface = sequential_max(per_vals, per_obs, shape.mesh.num_faces,
                             num_labels)
    if cfg.mode == "unary_only" or crf is None:
        marg = Marginals(q=_softmax_rows(surface.values))
    else:
        marg = crf_mod.mean_field(surface, shape.graph, crf,
                                  iters=cfg.mf_iters, tol=cfg.mf_tol,
                                  damping=cfg.mf_damping)
    return crf_mod.map_labeling(marg), marg, surface


@dataclass
class EvalResult:
    per_shape: list          # (shape_id, category, accuracy)
    per_category: dict       # category -> mean accuracy
    category_average: float
    dataset_average: float


def evaluate(params, crf, shapes, cfg: TrainConfig) -> EvalResult:
    """Area-weighted labeling accuracy per shape, aggregated per category
    and over the dataset."""
    if not shapes:
        raise ValueError("empty evaluation set")
    per_shape = []
    for shape in shapes:
        pred, _, _ = infer_shape(params, crf, shape, cfg)
        per_shape.append((shape.shape_id, shape.category,
                          accuracy(shape.mesh, pred, shape.labels)))
    cats = {}
    for _, cat, acc in per_shape:
        cats.setdefault(cat, []).append(acc)
    per_category = {c: float(np.mean(v)) for c, v in sorted(cats.items())}
    return EvalResult(
        per_shape=per_shape,
        per_category=per_category,
        category_average=float(np.mean(list(per_category.values()))),
        dataset_average=float(np.mean([a for _, _, a in per_shape])))
