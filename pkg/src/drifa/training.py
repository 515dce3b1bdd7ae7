"""Training loop, batched inference and evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import tensor as T
from .config import RunConfig, TrainSection
from .data import DatasetSplit, MultimodalDataset, Record, augment, generate, load_dataset, split
from .metrics import MetricsReport, classification_metrics
from .net import DrifaNet, mtl_loss
from .optim import Adam, PlateauScheduler, grad_norm

log = logging.getLogger(__name__)


@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    val_loss: float
    val_accuracy: float
    grad_norm: float

    CSV_HEADER = "epoch,lr,train_loss,val_loss,val_accuracy,grad_norm"

    def csv(self) -> str:
        return (f"{self.epoch},{self.lr:.6g},{self.train_loss:.6f},{self.val_loss:.6f},"
                f"{self.val_accuracy:.6f},{self.grad_norm:.6f}")


@dataclass
class TrainResult:
    history: list[EpochLog] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float("inf")
    best_state: dict[str, np.ndarray] = field(default_factory=dict)

    def log_csv(self) -> str:
        return "\n".join([EpochLog.CSV_HEADER] + [e.csv() for e in self.history]) + "\n"


def load_data(cfg: RunConfig) -> MultimodalDataset:
    if cfg.data.path:
        return load_dataset(cfg.data.path)
    return generate(cfg.synthetic_spec())


def load_split(cfg: RunConfig) -> DatasetSplit:
    return split(load_data(cfg), cfg.data.fractions, seed=cfg.data.seed)


def build_model(cfg: RunConfig, dataset: MultimodalDataset, dtype=None) -> DrifaNet:
    net_cfg = cfg.net_config(dataset.modalities, dataset.image_size[2], dataset.classes_per_task)
    return DrifaNet(net_cfg, dtype=dtype)


def predict_logits(model: DrifaNet, dataset: MultimodalDataset, batch_size: int = 256) -> list[np.ndarray]:
    chunks: list[list[np.ndarray]] = [[] for _ in range(model.config.tasks)]
    with T.no_grad():
        for start in range(0, len(dataset), batch_size):
            idx = np.arange(start, min(start + batch_size, len(dataset)))
            out = model.forward([x[idx] for x in dataset.inputs], training=False)
            for k, z in enumerate(out.logits):
                chunks[k].append(z.data)
    return [np.concatenate(c) for c in chunks]


def dataset_loss(model: DrifaNet, dataset: MultimodalDataset, batch_size: int = 256) -> tuple[float, float]:
    """Mean MTL loss and mean (over tasks) accuracy without dropout."""
    if len(dataset) == 0:
        return float("nan"), float("nan")
    logits = predict_logits(model, dataset, batch_size)
    weights = model.config.weights()
    total = 0.0
    accs = []
    for k, z in enumerate(logits):
        y = dataset.labels[:, k]
        zs = z.astype(np.float64) - z.max(axis=1, keepdims=True)
        log_p = zs - np.log(np.exp(zs).sum(axis=1, keepdims=True))
        total += weights[k] * float(-log_p[np.arange(len(y)), y].mean())
        accs.append(float((z.argmax(axis=1) == y).mean()))
    return total, float(np.mean(accs))


def evaluate(model: DrifaNet, dataset: MultimodalDataset, config_hash: str = "",
             batch_size: int = 256) -> MetricsReport:
    logits = predict_logits(model, dataset, batch_size)
    tasks = [classification_metrics(dataset.labels[:, k], z.argmax(axis=1), model.config.classes_per_task[k])
             for k, z in enumerate(logits)]
    return MetricsReport(tasks=tasks, config_hash=config_hash)


def _augment_batch(inputs: list[np.ndarray], ops, rng: np.random.Generator) -> list[np.ndarray]:
    out = [x.copy() for x in inputs]
    for k in range(out[0].shape[0]):
        if rng.random() < 0.5:
            continue
        rec = augment(Record(k, [x[k] for x in out], ()), ops, rng)
        for i, x in enumerate(rec.inputs):
            out[i][k] = x
    return out


def fit(model: DrifaNet, data: DatasetSplit, train: TrainSection,
        on_epoch: Callable[[EpochLog], None] | None = None) -> TrainResult:
    """Adam + plateau schedule on the MTL loss; keeps the weights with the best validation loss.

    On return the model holds those best weights.
    """
    params = model.parameters()
    opt = Adam(params, lr=train.lr)
    sched = PlateauScheduler(lr=train.lr, factor=train.scheduler_factor,
                             patience=train.scheduler_patience, min_lr=train.min_lr)
    weights = model.config.weights()
    result = TrainResult()
    ds = data.train
    monitor = data.val if len(data.val) else data.train
    for epoch in range(train.epochs):
        rng = np.random.default_rng([train.seed, epoch])
        order = rng.permutation(len(ds))
        losses, sizes, norm = [], [], 0.0
        for start in range(0, len(ds), train.batch_size):
            idx = order[start:start + train.batch_size]
            inputs = [x[idx] for x in ds.inputs]
            if train.augment:
                inputs = _augment_batch(inputs, train.augment, rng)
            opt.zero_grad()
            out = model.forward(inputs, training=True, rng=rng)
            loss, _ = mtl_loss(out.logits, ds.labels[idx], weights)
            loss.backward()
            norm = grad_norm(params)
            opt.step()
            losses.append(loss.item())
            sizes.append(len(idx))
        train_loss = float(np.average(losses, weights=sizes))
        val_loss, val_acc = dataset_loss(model, monitor)
        entry = EpochLog(epoch, opt.lr, train_loss, val_loss, val_acc, norm)
        result.history.append(entry)
        if val_loss < result.best_val_loss:
            result.best_val_loss = val_loss
            result.best_epoch = epoch
            result.best_state = {k: v.copy() for k, v in model.state_dict().items()}
        opt.lr = sched.step(val_loss)
        log.debug("epoch %d: %s", epoch, entry.csv())
        if on_epoch is not None:
            on_epoch(entry)
    if result.best_state:
        model.load_state_dict(result.best_state)
    return result


def train_run(cfg: RunConfig, on_epoch=None, dtype=None) -> tuple[DrifaNet, DatasetSplit, TrainResult]:
    data = load_split(cfg)
    model = build_model(cfg, data.train, dtype=dtype)
    result = fit(model, data, cfg.train, on_epoch=on_epoch)
    return model, data, result
