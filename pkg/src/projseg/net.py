"""Compact fully convolutional network over rendered channel images.

Maps an (H, W, Cin) image (shaded + depth, optionally + height) to
(H, W, L) raw per-label confidence maps; no softmax is applied, the
surface CRF turns confidences into probabilities.  The trunk
downsamples by 8 with strided 3x3 convolutions, widens the receptive
field with one dilated convolution, maps to L channels with a 1x1
convolution, and upsamples back to full resolution with a single
learned stride-8 transpose convolution (kernel 16).

Convolutions are implemented with explicit patch gather/scatter so the
backward pass is exact; transpose convolution reuses the same primitives
through adjointness (its forward is the conv input-gradient and vice
versa).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "conv" | "deconv"
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    dilation: int = 1
    relu: bool = False

    @property
    def padding(self) -> int:
        if self.kind == "conv":
            return self.dilation * (self.kernel - 1) // 2
        return (self.kernel - self.stride) // 2


def default_layers(in_channels: int, num_labels: int, width: int = 16):
    w = width
    return (
        LayerSpec("conv", in_channels, w, 3, relu=True),
        LayerSpec("conv", w, 2 * w, 3, stride=2, relu=True),
        LayerSpec("conv", 2 * w, 4 * w, 3, stride=2, relu=True),
        LayerSpec("conv", 4 * w, 4 * w, 3, stride=2, relu=True),
        LayerSpec("conv", 4 * w, 4 * w, 3, dilation=2, relu=True),
        LayerSpec("conv", 4 * w, num_labels, 1),
        LayerSpec("deconv", num_labels, num_labels, 16, stride=8),
    )


@dataclass
class NetworkParams:
    """Kernels and biases for every layer.

    conv weights are (k, k, Cin, Cout); deconv weights are stored as the
    weights of the adjoint convolution, (k, k, Cout, Cin).
    """

    layers: tuple
    weights: list
    biases: list

    @property
    def num_labels(self) -> int:
        return int(self.layers[-1].out_channels)

    @property
    def in_channels(self) -> int:
        return int(self.layers[0].in_channels)

    @property
    def dtype(self):
        return self.weights[0].dtype

    def astype(self, dtype) -> "NetworkParams":
        return NetworkParams(self.layers,
                             [w.astype(dtype) for w in self.weights],
                             [b.astype(dtype) for b in self.biases])

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.layers,
                             [w.copy() for w in self.weights],
                             [b.copy() for b in self.biases])


def init_params(seed: int, layers, dtype=np.float32) -> NetworkParams:
    """Fan-in scaled uniform init, kernels in +-sqrt(6 / (Cin * k^2));
    biases start at zero.  Deterministic per seed."""
    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for spec in layers:
        fan_in = spec.in_channels * spec.kernel * spec.kernel
        bound = np.sqrt(6.0 / fan_in)
        if spec.kind == "conv":
            shape = (spec.kernel, spec.kernel, spec.in_channels,
                     spec.out_channels)
        elif spec.kind == "deconv":
            shape = (spec.kernel, spec.kernel, spec.out_channels,
                     spec.in_channels)
        else:
            raise ValueError(f"unknown layer kind {spec.kind!r}")
        weights.append(rng.uniform(-bound, bound, size=shape).astype(dtype))
        biases.append(np.zeros(spec.out_channels, dtype=dtype))
    return NetworkParams(tuple(layers), weights, biases)


# ---------------------------------------------------------------------------
# convolution primitives (shared by conv and its adjoint)

def _out_size(n, k, stride, dilation, pad):
    eff = dilation * (k - 1) + 1
    return (n + 2 * pad - eff) // stride + 1


def _gather_patches(x, k, stride, dilation, pad):
    """(H, W, C) -> (Ho*Wo, k*k*C) patch matrix."""
    H, W, C = x.shape
    Ho = _out_size(H, k, stride, dilation, pad)
    Wo = _out_size(W, k, stride, dilation, pad)
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    patches = np.empty((Ho, Wo, k, k, C), dtype=x.dtype)
    for ky in range(k):
        y0 = ky * dilation
        for kx in range(k):
            x0 = kx * dilation
            patches[:, :, ky, kx, :] = xp[y0:y0 + Ho * stride:stride,
                                          x0:x0 + Wo * stride:stride, :]
    return patches.reshape(Ho * Wo, k * k * C), (Ho, Wo)


def _scatter_patches(cols, out_shape, k, stride, dilation, pad):
    """Adjoint of _gather_patches: (Ho*Wo, k*k*C) -> (H, W, C)."""
    H, W, C = out_shape
    Ho = _out_size(H, k, stride, dilation, pad)
    Wo = _out_size(W, k, stride, dilation, pad)
    cols = cols.reshape(Ho, Wo, k, k, C)
    xp = np.zeros((H + 2 * pad, W + 2 * pad, C), dtype=cols.dtype)
    for ky in range(k):
        y0 = ky * dilation
        for kx in range(k):
            x0 = kx * dilation
            xp[y0:y0 + Ho * stride:stride,
               x0:x0 + Wo * stride:stride, :] += cols[:, :, ky, kx, :]
    if pad:
        return xp[pad:-pad, pad:-pad, :]
    return xp


def _conv_fwd(x, w, stride, dilation, pad):
    k, _, cin, cout = w.shape
    cols, (Ho, Wo) = _gather_patches(x, k, stride, dilation, pad)
    return (cols @ w.reshape(k * k * cin, cout)).reshape(Ho, Wo, cout)


def _conv_bwd_input(gy, w, stride, dilation, pad, in_shape):
    k, _, cin, cout = w.shape
    Ho, Wo, _ = gy.shape
    cols = gy.reshape(Ho * Wo, cout) @ w.reshape(k * k * cin, cout).T
    return _scatter_patches(cols, in_shape, k, stride, dilation, pad)


def _conv_bwd_weights(x, gy, stride, dilation, pad, k):
    cin = x.shape[2]
    cout = gy.shape[2]
    cols, (Ho, Wo) = _gather_patches(x, k, stride, dilation, pad)
    gw = cols.T @ gy.reshape(Ho * Wo, cout)
    return gw.reshape(k, k, cin, cout)


# ---------------------------------------------------------------------------
# network forward/backward

def _layer_forward(spec: LayerSpec, w, b, x):
    if spec.kind == "conv":
        y = _conv_fwd(x, w, spec.stride, spec.dilation, spec.padding)
    else:
        H, W, _ = x.shape
        out_shape = (H * spec.stride, W * spec.stride, spec.out_channels)
        y = _conv_bwd_input(x, w, spec.stride, spec.dilation, spec.padding,
                            out_shape)
    return y + b


def forward_cached(params: NetworkParams, image: np.ndarray):
    """Forward pass keeping per-layer inputs and pre-activations for the
    backward pass.  Returns (output (H, W, L), cache)."""
    x = np.asarray(image, dtype=params.dtype)
    if x.ndim != 3 or x.shape[2] != params.in_channels:
        raise ValueError(
            f"expected (H, W, {params.in_channels}) input, got {x.shape}")
    if x.shape[0] % 8 or x.shape[1] % 8:
        raise ValueError("input height and width must be divisible by 8")
    cache = []
    for spec, w, b in zip(params.layers, params.weights, params.biases):
        z = _layer_forward(spec, w, b, x)
        cache.append((x, z))
        x = np.maximum(z, 0) if spec.relu else z
    return x, cache


def forward(params: NetworkParams, image: np.ndarray) -> np.ndarray:
    """Raw confidence maps (H, W, L) for one image."""
    out, _ = forward_cached(params, image)
    return out


def backward(params: NetworkParams, cache, grad_out: np.ndarray):
    """Exact gradients of the forward map contracted with ``grad_out``.

    Returns (weight grads, bias grads, input grad); the cache must come
    from a matching ``forward_cached`` call.
    """
    if cache is None or len(cache) != len(params.layers):
        raise ValueError("missing or mismatched forward cache")
    g = np.asarray(grad_out, dtype=params.dtype)
    gws = [None] * len(params.layers)
    gbs = [None] * len(params.layers)
    for i in range(len(params.layers) - 1, -1, -1):
        spec = params.layers[i]
        w = params.weights[i]
        x, z = cache[i]
        if spec.relu:
            g = g * (z > 0)
        gbs[i] = g.sum(axis=(0, 1))
        if spec.kind == "conv":
            gws[i] = _conv_bwd_weights(x, g, spec.stride, spec.dilation,
                                       spec.padding, spec.kernel)
            g = _conv_bwd_input(g, w, spec.stride, spec.dilation,
                                spec.padding, x.shape)
        else:
            # adjoint roles swap: the deconv input acts as the conv
            # output-gradient and vice versa
            gws[i] = _conv_bwd_weights(g, x, spec.stride, spec.dilation,
                                       spec.padding, spec.kernel)
            g = _conv_fwd(g, w, spec.stride, spec.dilation, spec.padding)
    return gws, gbs, g


def zero_grads(params: NetworkParams):
    return ([np.zeros_like(w) for w in params.weights],
            [np.zeros_like(b) for b in params.biases])


def accumulate_grads(acc, grads):
    gw_acc, gb_acc = acc
    gws, gbs = grads
    for a, g in zip(gw_acc, gws):
        a += g
    for a, g in zip(gb_acc, gbs):
        a += g


# ---------------------------------------------------------------------------
# first-layer channel adaptation (pretrained-filter import hook)

def adapt_input_channels(params: NetworkParams,
                         target_in: int) -> NetworkParams:
    """Adapt the first conv layer to ``target_in`` input channels by
    averaging the existing input channels and replicating the result,
    mirroring how color filters are folded for grayscale input."""
    first = params.layers[0]
    if first.in_channels == target_in:
        return params
    if first.kind != "conv":
        raise ValueError("first layer must be a convolution")
    w0 = params.weights[0]
    mean = w0.mean(axis=2, keepdims=True)
    new_w0 = np.repeat(mean, target_in, axis=2).astype(w0.dtype)
    layers = (replace(first, in_channels=target_in),) + params.layers[1:]
    weights = [new_w0] + [w.copy() for w in params.weights[1:]]
    biases = [b.copy() for b in params.biases]
    return NetworkParams(layers, weights, biases)


def import_weights(path, expect_labels: int | None = None,
                   target_in: int | None = None) -> NetworkParams:
    """Load network parameters from a checkpoint file, optionally
    adapting the first layer's input channel count."""
    from .storage import load_network
    params = load_network(path)
    if expect_labels is not None and params.num_labels != expect_labels:
        raise ValueError(
            f"checkpoint has {params.num_labels} labels, expected "
            f"{expect_labels}")
    if target_in is not None:
        params = adapt_input_channels(params, target_in)
    return params
