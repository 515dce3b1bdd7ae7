"""
Monte Carlo dropout ensembles.

The trained weights are shared by every ensemble member; members differ only in
their dropout masks. Member ``j`` runs ``iterations`` passes, and pass ``p``
draws its mask from a generator seeded with ``(seeds[j], p)``, so the result
does not depend on the order (or thread) in which passes run. All
``ensembles * iterations`` softmax outputs are averaged.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import InvalidRate, LengthMismatch
from .metrics import TaskMetrics, classification_metrics


@dataclass
class EnsembleConfig:
    ensembles: int = 5
    iterations: int = 20
    dropout_rate: float = 0.25
    seeds: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.ensembles < 1 or self.iterations < 1:
            raise ValueError("ensembles and iterations must be at least 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidRate(f"dropout rate must lie in [0, 1), got {self.dropout_rate}")
        if self.seeds is None:
            self.seeds = tuple(range(self.ensembles))
        self.seeds = tuple(int(s) for s in self.seeds)
        if len(self.seeds) != self.ensembles:
            raise ValueError(f"{len(self.seeds)} seeds for {self.ensembles} ensemble members")

    @property
    def passes(self) -> int:
        return self.ensembles * self.iterations


@dataclass
class PredictiveDistribution:
    mean_probs: np.ndarray  # N x n
    predicted: np.ndarray  # N
    entropy: np.ndarray  # N
    variance: np.ndarray  # N x n, across passes


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def predictive_entropy(probs: np.ndarray) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    return np.clip(terms.sum(axis=1), 0.0, np.log(p.shape[1]))


def summarize(pass_probs: np.ndarray) -> PredictiveDistribution:
    """Reduce a (passes x N x n) stack, in pass order, to a predictive distribution."""
    stack = np.asarray(pass_probs, dtype=np.float64)
    # offsets from the first pass: identical passes give exactly zero variance
    # and a mean bit-equal to that pass
    offsets = stack - stack[0]
    total = np.zeros(stack.shape[1:])
    for d in offsets:
        total = total + d
    mean_probs = stack[0] + total / stack.shape[0]
    variance = offsets.var(axis=0)
    return PredictiveDistribution(
        mean_probs=mean_probs,
        predicted=mean_probs.argmax(axis=1),  # first maximum: lowest class wins ties
        entropy=predictive_entropy(mean_probs),
        variance=variance,
    )


def mc_predict(model, inputs: Sequence, config: EnsembleConfig, workers: int = 1) -> list[PredictiveDistribution]:
    """Run ``config.passes`` stochastic passes; returns one distribution per task."""
    with T.no_grad():
        features = model.encode(inputs).features

    def one_pass(index: int) -> list[np.ndarray]:
        member, it = divmod(index, config.iterations)
        rng = np.random.default_rng([config.seeds[member], it])
        with T.no_grad():
            logits = model.classify(features, training=True, rng=rng, dropout=config.dropout_rate)
        return [_softmax(z.data.astype(np.float64)) for z in logits]

    indices = range(config.passes)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one_pass, indices))
    else:
        results = [one_pass(i) for i in indices]
    tasks = len(results[0])
    return [summarize(np.stack([r[k] for r in results])) for k in range(tasks)]


def deterministic_predict(model, inputs: Sequence) -> list[PredictiveDistribution]:
    """Single dropout-free pass, packaged like :func:`mc_predict` output."""
    with T.no_grad():
        logits = model.forward(inputs, training=False).logits
    return [summarize(_softmax(z.data.astype(np.float64))[None]) for z in logits]


@dataclass
class UncertaintyReport:
    metrics: TaskMetrics
    mean_entropy: float
    mean_max_prob: float
    deciles: list[tuple[float, float, int, float]]  # entropy low, high, count, accuracy
    samples: list[tuple[int, int, int, float, float]] = field(default_factory=list)

    def samples_csv(self) -> str:
        lines = ["id,predicted,true,entropy,max_prob"]
        lines += [f"{i},{p},{t},{e:.6f},{m:.6f}" for i, p, t, e, m in self.samples]
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        m = self.metrics
        lines = [
            f"accuracy  {m.accuracy:.4f}",
            f"precision {m.precision:.4f}",
            f"recall    {m.recall:.4f}",
            f"f1        {m.f1:.4f}",
            f"mean entropy  {self.mean_entropy:.4f}",
            f"mean max prob {self.mean_max_prob:.4f}",
            "entropy decile  range              n   accuracy",
        ]
        for k, (lo, hi, n, acc) in enumerate(self.deciles):
            lines.append(f"  {k:2d}           [{lo:.4f}, {hi:.4f}]  {n:4d}  {acc:.4f}")
        return "\n".join(lines) + "\n"


def uncertainty_report(dist: PredictiveDistribution, labels, ids=None) -> UncertaintyReport:
    labels = np.asarray(labels, dtype=np.int64)
    n = dist.mean_probs.shape[0]
    if labels.shape[0] != n:
        raise LengthMismatch(f"{labels.shape[0]} labels for {n} predictions")
    ids = np.arange(n) if ids is None else np.asarray(ids)
    metrics = classification_metrics(labels, dist.predicted, dist.mean_probs.shape[1])
    max_prob = dist.mean_probs.max(axis=1)
    correct = dist.predicted == labels
    order = np.argsort(dist.entropy, kind="stable")
    deciles = []
    for chunk in np.array_split(order, min(10, n)) if n else []:
        e = dist.entropy[chunk]
        deciles.append((float(e.min()), float(e.max()), int(len(chunk)), float(correct[chunk].mean())))
    samples = [(int(ids[k]), int(dist.predicted[k]), int(labels[k]), float(dist.entropy[k]), float(max_prob[k]))
               for k in range(n)]
    return UncertaintyReport(
        metrics=metrics,
        mean_entropy=float(dist.entropy.mean()) if n else 0.0,
        mean_max_prob=float(max_prob.mean()) if n else 0.0,
        deciles=deciles,
        samples=samples,
    )
