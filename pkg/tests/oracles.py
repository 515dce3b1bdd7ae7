"""
Independent references for the tests.

Everything here is written as explicit Python loops over scalars (no vectorised
NumPy arithmetic, no im2col, no broadcasting) so it shares no code path with
the library. Gradients are checked with central finite differences.
"""

from __future__ import annotations

import math

import numpy as np


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------

def sigmoid(v: float) -> float:
    return 1.0 / (1.0 + math.exp(-v)) if v >= 0 else math.exp(v) / (1.0 + math.exp(v))


def map_scalar(fn, x: np.ndarray) -> np.ndarray:
    out = np.empty(x.shape)
    for idx in np.ndindex(x.shape):
        out[idx] = fn(float(x[idx]))
    return out


def conv(x, w, b=None, stride=1):
    """Same-padded cross-correlation, NHWC input, K x K x Cin x Cout kernel."""
    n, h, wd, cin = x.shape
    k, _, _, cout = w.shape
    ho = -(-h // stride)
    wo = -(-wd // stride)
    top = max((ho - 1) * stride + k - h, 0) // 2
    left = max((wo - 1) * stride + k - wd, 0) // 2
    out = np.zeros((n, ho, wo, cout))
    for s in range(n):
        for i in range(ho):
            for j in range(wo):
                for co in range(cout):
                    acc = 0.0 if b is None else float(b[co])
                    for di in range(k):
                        for dj in range(k):
                            r, c = i * stride + di - top, j * stride + dj - left
                            if 0 <= r < h and 0 <= c < wd:
                                for ci in range(cin):
                                    acc += float(x[s, r, c, ci]) * float(w[di, dj, ci, co])
                    out[s, i, j, co] = acc
    return out


def dense(v, w, b=None):
    n, fin = v.shape
    fout = w.shape[1]
    out = np.zeros((n, fout))
    for s in range(n):
        for o in range(fout):
            acc = 0.0 if b is None else float(b[o])
            for i in range(fin):
                acc += float(v[s, i]) * float(w[i, o])
            out[s, o] = acc
    return out


def _reduce(kind, values):
    if kind == "avg":
        total = 0.0
        for v in values:
            total += v
        return total / len(values)
    best = values[0]
    for v in values[1:]:
        if (kind == "max" and v > best) or (kind == "min" and v < best):
            best = v
    return best


def global_pool(kind, x):
    n, h, w, c = x.shape
    out = np.zeros((n, c))
    for s in range(n):
        for ch in range(c):
            out[s, ch] = _reduce(kind, [float(x[s, i, j, ch]) for i in range(h) for j in range(w)])
    return out


def local_pool(kind, x, k=3):
    """Stride 1, window centred on each cell; cells outside the image are ignored."""
    n, h, w, c = x.shape
    r = k // 2
    out = np.zeros(x.shape)
    for s in range(n):
        for i in range(h):
            for j in range(w):
                for ch in range(c):
                    vals = [float(x[s, a, b, ch])
                            for a in range(i - r, i + r + 1) for b in range(j - r, j + r + 1)
                            if 0 <= a < h and 0 <= b < w]
                    out[s, i, j, ch] = _reduce(kind, vals)
    return out


def add(a, b):
    out = np.empty(a.shape)
    for idx in np.ndindex(a.shape):
        out[idx] = float(a[idx]) + float(b[idx])
    return out


def relu(x):
    return map_scalar(lambda v: v if v > 0 else 0.0, x)


# ---------------------------------------------------------------------------
# attention modules; parameters are passed as plain arrays
# ---------------------------------------------------------------------------

def conv_params(module):
    return module.weight.data, None if module.bias is None else module.bias.data


def hifa(x, p):
    """p: the library's Hifa module (only its arrays are read)."""
    (w0, b0), (w1, b1), (w2, b2), (w3, b3) = [conv_params(m) for m in p.psi]
    pi = conv(x, w0, b0)
    lam1 = conv(pi, w1, b1)
    lam2 = conv(add(pi, lam1), w2, b2)
    lam3 = conv(lam2, w3, b3)
    streams = [global_pool("avg", pi), global_pool("max", lam1),
               global_pool("avg", lam2), global_pool("max", lam3)]
    n, c = streams[0].shape
    joined = np.zeros((n, 4 * c))
    for s in range(n):
        for q, st in enumerate(streams):
            for ch in range(c):
                joined[s, q * c + ch] = st[s, ch]
    return dense(joined, p.f.weight.data, p.f.bias.data)


def clia(x, p):
    eta1 = map_scalar(sigmoid, conv(x, *conv_params(p.psi1)))
    pooled1 = local_pool("avg", eta1)
    eta2 = map_scalar(sigmoid, conv(pooled1, *conv_params(p.psi2)))
    return add(pooled1, local_pool("avg", eta2))


def attention(vec, spatial, w_vec=1.0, w_spatial=1.0, shape=None):
    """sigmoid(vec[n, c] * w_vec + spatial[n, i, j, c] * w_spatial) for every cell."""
    if spatial is None:
        n, c = vec.shape
        out = np.zeros((n, 1, 1, c))
        for s in range(n):
            for ch in range(c):
                out[s, 0, 0, ch] = sigmoid(float(vec[s, ch]) * w_vec)
        return out
    out = np.zeros(spatial.shape)
    for idx in np.ndindex(spatial.shape):
        s, _, _, ch = idx
        z = float(spatial[idx]) * w_spatial
        if vec is not None:
            z += float(vec[s, ch]) * w_vec
        out[idx] = sigmoid(z)
    return out


def modulate(x, a, w_c=None):
    out = np.zeros(x.shape)
    for idx in np.ndindex(x.shape):
        s, i, j, ch = idx
        av = a[s, i if a.shape[1] > 1 else 0, j if a.shape[2] > 1 else 0, ch]
        wc = 1.0 if w_c is None else float(w_c[ch])
        out[idx] = float(x[idx]) * float(av) * wc
    return out


def mglif_global(features, p):
    out = None
    for key, kind in (("gmin", "min"), ("gmax", "max"), ("gavg", "avg")):
        total = global_pool(kind, features[0])
        for f in features[1:]:
            total = add(total, global_pool(kind, f))
        term = dense(total, p.fpool[key].weight.data, p.fpool[key].bias.data)
        out = term if out is None else add(out, term)
    return out


def mglif_local(features, p):
    out = None
    for key, kind in (("lmin", "min"), ("lmax", "max"), ("lavg", "avg")):
        total = local_pool(kind, features[0])
        for f in features[1:]:
            total = add(total, local_pool(kind, f))
        term = conv(total, *conv_params(p.fpool[key]))
        out = term if out is None else add(out, term)
    return out


def mfa(x, m):
    """Full MFA block with every part and weight enabled."""
    a = attention(hifa(x, m.hifa), clia(x, m.clia), float(m.omega_d.data[0]), float(m.omega_l.data[0]))
    return modulate(x, a, m.omega_c.data)


def mifa(features, m):
    A = attention(mglif_global(features, m), mglif_local(features, m),
                  float(m.omega_dm.data[0]), float(m.omega_lm.data[0]))
    return [modulate(f, A, w.data) for f, w in zip(features, m.omega_cm)], A


def rra(x, block):
    h = mfa(relu(conv(x, *conv_params(block.conv1), stride=block.conv1._stride)), block.mfa1)
    h = mfa(relu(conv(h, *conv_params(block.conv2))), block.mfa2)
    shortcut = x if block.skip is None else conv(x, block.skip.weight.data, None, stride=block.skip._stride)
    return add(shortcut, h)


def net_logits(inputs, net):
    """Full-model forward (all modules enabled, no dropout)."""
    x_prime = []
    for x, br in zip(inputs, net.branch):
        h = relu(conv(x, *conv_params(br.stem)))
        for block in br.rra:
            h = rra(h, block)
        x_prime.append(mfa(h, br.refine))
    x_s, _ = mifa(x_prime, net.mifa)
    pooled = [global_pool("avg", f) for f in x_s]
    n = pooled[0].shape[0]
    feats = np.array([[v for p in pooled for v in p[s]] for s in range(n)])
    return [dense(feats, h.weight.data, h.bias.data) for h in net.head]


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

def numeric_grad(f, arr: np.ndarray, eps: float = 1e-5, coords=None, richardson: bool = False) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``arr`` (modified in place, then restored).

    With ``richardson`` the steps ``eps`` and ``eps / 2`` are combined to cancel
    the h^2 term, which allows a larger step and so less round-off.
    """

    def central(idx, h):
        old = arr[idx]
        arr[idx] = old + h
        hi = f()
        arr[idx] = old - h
        lo = f()
        arr[idx] = old
        return (hi - lo) / (2 * h)

    grad = np.zeros_like(arr, dtype=np.float64)
    indices = list(np.ndindex(arr.shape)) if coords is None else coords
    for idx in indices:
        if richardson:
            grad[idx] = (4 * central(idx, eps / 2) - central(idx, eps)) / 3
        else:
            grad[idx] = central(idx, eps)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| over the larger of the two gradients' max magnitudes (floor 1e-8)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), 1e-8)
    return float(np.abs(a - n).max(initial=0.0) / scale)
