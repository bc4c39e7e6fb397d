"""Independent reference implementations backing the tests.

Everything here deliberately avoids the production code paths: ray
casting instead of rasterization, heap Dijkstra instead of the sparse
graph solver, nested-loop convolutions, exhaustive enumeration instead
of mean-field, and brute-force pixel scans instead of vectorized
pooling.
"""

import heapq
import itertools

import numpy as np


# ---------------------------------------------------------------------------
# ray casting (Moller-Trumbore against every face)

def ray_cast_face(mesh, origin, direction, eps=1e-12):
    """Nearest face hit by the ray, or -1.  Returns (face_id, t)."""
    v0 = mesh.vertices[mesh.faces[:, 0]]
    e1 = mesh.vertices[mesh.faces[:, 1]] - v0
    e2 = mesh.vertices[mesh.faces[:, 2]] - v0
    d = np.asarray(direction, dtype=np.float64)
    p = np.cross(d, e2)
    det = (e1 * p).sum(axis=1)
    ok = np.abs(det) > eps
    inv = np.zeros_like(det)
    inv[ok] = 1.0 / det[ok]
    tvec = np.asarray(origin) - v0
    u = (tvec * p).sum(axis=1) * inv
    q = np.cross(tvec, e1)
    v = (np.broadcast_to(d, e1.shape) * q).sum(axis=1) * inv
    t = (e2 * q).sum(axis=1) * inv
    hit = ok & (u >= -1e-9) & (v >= -1e-9) & (u + v <= 1 + 1e-9) & (t > eps)
    if not hit.any():
        return -1, np.inf
    idx = np.flatnonzero(hit)
    best = idx[np.argmin(t[idx])]
    return int(best), float(t[best])


def pixel_ray(cam, ix, iy):
    """World-space ray through the center of pixel (ix, iy)."""
    right, up, fwd = cam.basis()
    W, H = cam.resolution
    tan_y = np.tan(0.5 * cam.fov_y)
    tan_x = tan_y * (W / H)
    xn = (2.0 * ix + 1.0 - W) / W
    yn = -(2.0 * iy + 1.0 - H) / H
    d = fwd + right * (xn * tan_x) + up * (yn * tan_y)
    return cam.eye, d / np.linalg.norm(d)


def raycast_visible_points(mesh, cam, points, tol=1e-6):
    """Point visibility by casting a ray from the eye to each point."""
    out = np.zeros(points.shape[0], dtype=bool)
    for i, p in enumerate(points):
        d = p - cam.eye
        dist = np.linalg.norm(d)
        face, t = ray_cast_face(mesh, cam.eye, d / dist)
        out[i] = face >= 0 and t >= dist * (1.0 - 1e-6) - tol
    return out


# ---------------------------------------------------------------------------
# Dijkstra over the face dual graph

def dual_dijkstra(num_faces, pairs, weights, source, cutoff):
    """Plain heap Dijkstra; distances above cutoff pruned."""
    adj = [[] for _ in range(num_faces)]
    for (a, b), w in zip(pairs, weights):
        adj[a].append((b, w))
        adj[b].append((a, w))
    dist = {source: 0.0}
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist.get(u, np.inf):
            continue
        for v, w in adj[u]:
            nd = d + w
            if nd < cutoff and nd < dist.get(v, np.inf):
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


def all_close_pairs(num_faces, pairs, weights, cutoff):
    """All unordered face pairs with dual-graph distance < cutoff."""
    out = {}
    for s in range(num_faces):
        for v, d in dual_dijkstra(num_faces, pairs, weights, s,
                                  cutoff).items():
            if v > s:
                out[(s, v)] = d
    return out


# ---------------------------------------------------------------------------
# projection by brute-force pixel scan

def project_scan(confidences, references, num_faces, pool="max"):
    M, H, W, L = confidences.shape
    values = np.zeros((num_faces, L))
    observed = np.zeros(num_faces, dtype=bool)
    for f in range(num_faces):
        hits = []
        for m in range(M):
            for i in range(H):
                for j in range(W):
                    if references[m, i, j] == f:
                        hits.append(confidences[m, i, j])
        if hits:
            observed[f] = True
            stackv = np.stack(hits)
            values[f] = stackv.max(axis=0) if pool == "max" \
                else stackv.mean(axis=0)
    return values, observed


# ---------------------------------------------------------------------------
# exact CRF enumeration

def enumerate_crf(unary, graph, params):
    """Exact marginals, MAP labeling and log partition by enumerating
    every labeling (use only for tiny problems)."""
    from projseg.crf import labeling_score
    F, L = np.asarray(unary if not hasattr(unary, "values")
                      else unary.values).shape
    scores = []
    labelings = list(itertools.product(range(L), repeat=F))
    for lab in labelings:
        scores.append(labeling_score(np.asarray(lab, dtype=np.int64),
                                     unary, graph, params))
    scores = np.asarray(scores)
    m = scores.max()
    log_z = m + np.log(np.exp(scores - m).sum())
    probs = np.exp(scores - log_z)
    marginals = np.zeros((F, L))
    for lab, p in zip(labelings, probs):
        for f, l in enumerate(lab):
            marginals[f, l] += p
    map_lab = np.asarray(labelings[int(np.argmax(scores))], dtype=np.int64)
    return marginals, map_lab, float(log_z)


# ---------------------------------------------------------------------------
# direct (nested-loop) convolutions

def conv2d_naive(x, w, b, stride=1, dilation=1, pad=0):
    H, W, Cin = x.shape
    k, _, _, Cout = w.shape
    xp = np.zeros((H + 2 * pad, W + 2 * pad, Cin), dtype=np.float64)
    xp[pad:pad + H, pad:pad + W] = x
    eff = dilation * (k - 1) + 1
    Ho = (H + 2 * pad - eff) // stride + 1
    Wo = (W + 2 * pad - eff) // stride + 1
    y = np.zeros((Ho, Wo, Cout))
    for oy in range(Ho):
        for ox in range(Wo):
            for ky in range(k):
                for kx in range(k):
                    iy = oy * stride + ky * dilation
                    ix = ox * stride + kx * dilation
                    y[oy, ox] += xp[iy, ix] @ w[ky, kx]
    return y + b


def deconv2d_naive(x, w, b, stride, pad):
    """Transpose convolution: scatter each input pixel through the
    kernel.  ``w`` is (k, k, Cout, Cin) as stored by the network."""
    H, W, Cin = x.shape
    k = w.shape[0]
    Cout = w.shape[2]
    Ho = (H - 1) * stride + k - 2 * pad
    Wo = (W - 1) * stride + k - 2 * pad
    yfull = np.zeros((Ho + 2 * pad, Wo + 2 * pad, Cout))
    for iy in range(H):
        for ix in range(W):
            for ky in range(k):
                for kx in range(k):
                    yfull[iy * stride + ky, ix * stride + kx] += \
                        w[ky, kx] @ x[iy, ix]
    y = yfull[pad:pad + Ho, pad:pad + Wo]
    return y + b


# ---------------------------------------------------------------------------
# finite differences

def finite_diff(fn, x, eps=1e-3):
    """Central finite-difference gradient of scalar fn at array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        xp = x.copy()
        xp[idx] += eps
        xm = x.copy()
        xm[idx] -= eps
        g[idx] = (fn(xp) - fn(xm)) / (2 * eps)
        it.iternext()
    return g


def rel_error(a, b, floor=1e-6):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(float(np.abs(a).max(initial=0.0)),
                float(np.abs(b).max(initial=0.0)), floor)
    return float(np.abs(a - b).max(initial=0.0) / scale)
