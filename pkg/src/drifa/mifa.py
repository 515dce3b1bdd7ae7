"""
Multimodal information fusion attention.

All modalities' enhanced features are pooled with three global poolings
(min, max, avg) and three local poolings (3x3 min, max, avg). For each pooling
kind the pooled maps are summed across modalities, passed through that kind's
own dense layer, and the three results are added: ``g_prime`` (N x C) from the
global half and ``l_prime`` (N x H x W x C) from the local half. One shared map
``A = sigmoid(g_prime * w_dm + l_prime * w_lm)`` then rescales every modality,
each with its own channel weights.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ShapeMismatch
from .mfa import channel_modulate, modulated_attention
from .nn import Conv2d, Linear, Module, learnable_weight
from .tensor import Tensor

GLOBAL_POOLS = (("gmin", "min"), ("gmax", "max"), ("gavg", "avg"))
LOCAL_POOLS = (("lmin", "min"), ("lmax", "max"), ("lavg", "avg"))


def _check_features(features: Sequence[Tensor]) -> None:
    if len(features) < 2:
        raise ValueError("multimodal fusion needs at least two modalities")
    ref = features[0].shape
    for f in features[1:]:
        if f.shape != ref:
            raise ShapeMismatch(f"modality shapes differ: {f.shape} vs {ref}")


def pooled_sum(features: Sequence[Tensor], kind: str, scope: str) -> Tensor:
    total = T.pool(kind, scope, features[0])
    for f in features[1:]:
        total = T.add(total, T.pool(kind, scope, f))
    return total


def mglif_global(features: Sequence[Tensor], fpool: dict) -> Tensor:
    _check_features(features)
    n, c = features[0].shape[0], features[0].shape[3]
    out = None
    for key, kind in GLOBAL_POOLS:
        s = T.reshape(pooled_sum(features, kind, "global"), (n, c))
        term = fpool[key](s)
        out = term if out is None else T.add(out, term)
    return out


def mglif_local(features: Sequence[Tensor], fpool: dict) -> Tensor:
    _check_features(features)
    out = None
    for key, kind in LOCAL_POOLS:
        term = fpool[key](pooled_sum(features, kind, "local"))
        out = term if out is None else T.add(out, term)
    return out


def mifa_attention(g_prime: Tensor | None, l_prime: Tensor | None,
                   omega_dm: Tensor | None = None, omega_lm: Tensor | None = None) -> Tensor:
    return modulated_attention(g_prime, l_prime, omega_dm, omega_lm)


def mifa_apply(features: Sequence[Tensor], A: Tensor, omega_cm: Sequence[Tensor | None] | None = None) -> list[Tensor]:
    """Multiply every modality by the same map ``A`` and by its own channel weights."""
    if omega_cm is None:
        omega_cm = [None] * len(features)
    if len(omega_cm) != len(features):
        raise ShapeMismatch(f"{len(omega_cm)} channel weight vectors for {len(features)} modalities")
    out = []
    for x, w in zip(features, omega_cm):
        if A.shape[0] != x.shape[0] or A.shape[3] != x.shape[3] or (
            A.shape[1:3] != (1, 1) and A.shape[1:3] != x.shape[1:3]
        ):
            raise ShapeMismatch(f"attention map {A.shape} does not fit features {x.shape}")
        out.append(channel_modulate(x, A, w))
    return out


class Mifa(Module):
    def __init__(self, channels: int, modalities: int, rng: np.random.Generator,
                 mgifa: bool = True, mlifa: bool = True,
                 omega_dm: bool = True, omega_lm: bool = True, omega_cm: bool = True, dtype=None):
        self.fpool = {key: Linear(channels, channels, rng, dtype=dtype) for key, _ in GLOBAL_POOLS}
        self.fpool.update({key: Conv2d(channels, channels, 1, rng, dtype=dtype) for key, _ in LOCAL_POOLS})
        self.omega_dm = learnable_weight((1,), omega_dm and mgifa, dtype)
        self.omega_lm = learnable_weight((1,), omega_lm and mlifa, dtype)
        self.omega_cm = [learnable_weight((channels,), omega_cm and (mgifa or mlifa), dtype)
                         for _ in range(modalities)]
        self._use_global = mgifa
        self._use_local = mlifa
        for key, _ in GLOBAL_POOLS:
            for p in self.fpool[key].parameters():
                p.trainable = mgifa
        for key, _ in LOCAL_POOLS:
            for p in self.fpool[key].parameters():
                p.trainable = mlifa

    @property
    def active(self) -> bool:
        return self._use_global or self._use_local

    def attention(self, features: Sequence[Tensor]) -> Tensor:
        g = mglif_global(features, self.fpool) if self._use_global else None
        l = mglif_local(features, self.fpool) if self._use_local else None
        w_d = self.omega_dm if self.omega_dm.trainable else None
        w_l = self.omega_lm if self.omega_lm.trainable else None
        return mifa_attention(g, l, w_d, w_l)

    def forward(self, features: Sequence[Tensor], taps: dict | None = None) -> list[Tensor]:
        if not self.active:
            return list(features)
        A = self.attention(features)
        if taps is not None:
            taps["A"] = A
        weights = [w if w.trainable else None for w in self.omega_cm]
        return mifa_apply(features, A, weights)
