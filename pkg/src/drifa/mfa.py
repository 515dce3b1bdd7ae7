"""
Multi-branch fusion attention for a single modality.

Two sub-modules look at the same feature map ``x`` (N x H x W x C):

* HIFA chains four 1x1 convolutions, pools the four streams with alternating
  global average / global max pooling, concatenates them pairwise and then
  jointly, and compresses the 4C vector back to C with a dense layer (``d_hat``).
* CLIA gates ``x`` through two sigmoid 1x1 convolutions separated by local
  average pooling and adds the two pooled stages (``l_hat``, same shape as ``x``).

The attention map is ``a = sigmoid(d_hat * w_d + l_hat * w_l)`` with ``d_hat``
broadcast over H and W, and the block output is ``x * a * w_c``.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ShapeMismatch
from .nn import Conv2d, Linear, Module, Parameter, learnable_weight
from .tensor import Tensor

# HIFA pools its four streams in this order: GAP, GMP, GAP, GMP.
HIFA_POOLS = ("avg", "max", "avg", "max")


class Hifa(Module):
    def __init__(self, channels: int, rng: np.random.Generator, dtype=None):
        self.psi = [Conv2d(channels, channels, 1, rng, dtype=dtype) for _ in range(4)]
        self.f = Linear(4 * channels, channels, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return hifa_forward(x, self)


class Clia(Module):
    def __init__(self, channels: int, rng: np.random.Generator, dtype=None):
        self.psi1 = Conv2d(channels, channels, 1, rng, dtype=dtype)
        self.psi2 = Conv2d(channels, channels, 1, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return clia_forward(x, self)


def hifa_streams(x: Tensor, params: Hifa) -> list[Tensor]:
    """The four pooled streams l_0..l_3, each N x C."""
    if x.ndim != 4 or x.shape[3] != params.psi[0].weight.shape[2]:
        raise ShapeMismatch(f"HIFA built for {params.psi[0].weight.shape[2]} channels, got {x.shape}")
    p0, p1, p2, p3 = params.psi
    pi = p0(x)
    lam1 = p1(pi)
    lam2 = p2(T.add(pi, lam1))
    lam3 = p3(lam2)
    n, c = x.shape[0], x.shape[3]
    return [
        T.reshape(T.pool(kind, "global", s), (n, c))
        for kind, s in zip(HIFA_POOLS, (pi, lam1, lam2, lam3))
    ]


def hifa_forward(x: Tensor, params: Hifa) -> Tensor:
    l0, l1, l2, l3 = hifa_streams(x, params)
    h0 = T.concat([l0, l1], axis=1)
    h1 = T.concat([l2, l3], axis=1)
    return params.f(T.concat([h0, h1], axis=1))


def clia_forward(x: Tensor, params: Clia) -> Tensor:
    if x.ndim != 4 or x.shape[3] != params.psi1.weight.shape[2]:
        raise ShapeMismatch(f"CLIA built for {params.psi1.weight.shape[2]} channels, got {x.shape}")
    eta1 = T.sigmoid(params.psi1(x))
    pooled1 = T.pool("avg", "local", eta1, kernel=3)
    eta2 = T.sigmoid(params.psi2(pooled1))
    pooled2 = T.pool("avg", "local", eta2, kernel=3)
    return T.add(pooled1, pooled2)


def _scalar_weight(w: Tensor, ndim: int) -> Tensor:
    return T.reshape(w, (1,) * ndim)


def modulated_attention(vec: Tensor | None, spatial: Tensor | None,
                        omega_vec: Tensor | None = None, omega_spatial: Tensor | None = None) -> Tensor:
    """sigmoid(vec * omega_vec + spatial * omega_spatial); a ``None`` weight means the constant 1.

    ``vec`` is N x C and is broadcast over the spatial axes of ``spatial``.
    Either input may be ``None`` (its sub-module disabled); if ``spatial`` is
    missing the result is N x 1 x 1 x C and broadcasts when applied.
    """
    if vec is None and spatial is None:
        raise ValueError("attention needs at least one input")
    term_v = term_s = None
    if vec is not None:
        if vec.ndim != 2:
            raise ShapeMismatch(f"expected an N x C vector, got {vec.shape}")
        term_v = T.reshape(vec, (vec.shape[0], 1, 1, vec.shape[1]))
        if omega_vec is not None:
            term_v = T.mul(term_v, _scalar_weight(omega_vec, 4))
    if spatial is not None:
        term_s = spatial
        if omega_spatial is not None:
            term_s = T.mul(term_s, _scalar_weight(omega_spatial, 4))
    if term_v is None:
        return T.sigmoid(term_s)
    if term_s is None:
        return T.sigmoid(term_v)
    if term_v.shape[0] != term_s.shape[0] or term_v.shape[3] != term_s.shape[3]:
        raise ShapeMismatch(f"cannot combine {vec.shape} with {spatial.shape}")
    return T.sigmoid(T.add(term_s, term_v))


def mfa_attention(d_hat: Tensor | None, l_hat: Tensor | None,
                  omega_d: Tensor | None = None, omega_l: Tensor | None = None) -> Tensor:
    return modulated_attention(d_hat, l_hat, omega_d, omega_l)


def channel_modulate(x: Tensor, a: Tensor, omega_c: Tensor | None = None) -> Tensor:
    """x * a * omega_c, with omega_c (length C) broadcast over N, H, W."""
    out = T.mul(x, a)
    if omega_c is not None:
        if omega_c.shape != (x.shape[3],):
            raise ShapeMismatch(f"channel weight {omega_c.shape} for {x.shape[3]} channels")
        out = T.mul(out, T.reshape(omega_c, (1, 1, 1, x.shape[3])))
    return out


def mfa_apply(x: Tensor, a: Tensor, omega_c: Tensor | None = None) -> Tensor:
    return channel_modulate(x, a, omega_c)


class Mfa(Module):
    """One MFA instance. Disabled parts are still built (so ablations share an
    initialization) but skipped in forward and frozen."""

    def __init__(self, channels: int, rng: np.random.Generator, hifa: bool = True, clia: bool = True,
                 omega_d: bool = True, omega_l: bool = True, omega_c: bool = True, dtype=None):
        self.hifa = Hifa(channels, rng, dtype=dtype)
        self.clia = Clia(channels, rng, dtype=dtype)
        self.omega_d = learnable_weight((1,), omega_d, dtype)
        self.omega_l = learnable_weight((1,), omega_l, dtype)
        self.omega_c = learnable_weight((channels,), omega_c, dtype)
        self._use_hifa = hifa
        self._use_clia = clia
        for p in self.hifa.parameters():
            p.trainable = hifa
        for p in self.clia.parameters():
            p.trainable = clia
        if not hifa:
            self.omega_d.trainable = False
        if not clia:
            self.omega_l.trainable = False
        if not (hifa or clia):
            self.omega_c.trainable = False

    @property
    def active(self) -> bool:
        return self._use_hifa or self._use_clia

    def _weight(self, w: Parameter) -> Parameter | None:
        return w if w.trainable else None

    def attention(self, x: Tensor) -> Tensor:
        d_hat = hifa_forward(x, self.hifa) if self._use_hifa else None
        l_hat = clia_forward(x, self.clia) if self._use_clia else None
        return mfa_attention(d_hat, l_hat, self._weight(self.omega_d), self._weight(self.omega_l))

    def forward(self, x: Tensor, taps: list | None = None) -> Tensor:
        if not self.active:
            return x
        a = self.attention(x)
        if taps is not None:
            taps.append(a)
        return mfa_apply(x, a, self._weight(self.omega_c))
