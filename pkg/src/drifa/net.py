"""
The full multi-branch network.

Each modality gets its own branch: a 3x3 stem convolution, a stack of
residual attention blocks (two 3x3 convolutions, each followed by relu and an
MFA), and one more MFA that refines the branch output. The branch outputs meet
in a single MIFA stage, whose per-modality outputs are globally average-pooled,
concatenated, passed through dropout and read by one dense head per task.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigMismatch, InvalidTaskOrClass, ShapeMismatch, WeightCountMismatch
from .mfa import Mfa
from .mifa import Mifa
from .nn import Conv2d, Linear, Module
from .tensor import Tensor

MODULE_FLAGS = ("mfa", "mifa", "hifa", "clia", "mgifa", "mlifa")
OMEGA_FLAGS = ("omega_d", "omega_l", "omega_c", "omega_dm", "omega_lm", "omega_cm")


@dataclass
class DrifaNetConfig:
    modalities: int = 2
    in_channels: int = 1
    channels: int = 8
    blocks: int = 2
    downsample: tuple[int, ...] = ()
    classes_per_task: tuple[int, ...] = (2,)
    task_weights: tuple[float, ...] | None = None
    dropout: float = 0.25
    mfa: bool = True
    mifa: bool = True
    hifa: bool = True
    clia: bool = True
    mgifa: bool = True
    mlifa: bool = True
    omega_d: bool = True
    omega_l: bool = True
    omega_c: bool = True
    omega_dm: bool = True
    omega_lm: bool = True
    omega_cm: bool = True
    seed: int = 0

    def __post_init__(self):
        self.downsample = tuple(int(b) for b in self.downsample)
        self.classes_per_task = tuple(int(n) for n in self.classes_per_task)
        if self.task_weights is not None:
            self.task_weights = tuple(float(w) for w in self.task_weights)

    def validate(self) -> None:
        if self.modalities < 1:
            raise ConfigMismatch("need at least one modality")
        if not self.classes_per_task:
            raise ConfigMismatch("need at least one task")
        if any(n < 2 for n in self.classes_per_task):
            raise ConfigMismatch("every task needs at least two classes")
        if self.use_mifa and self.modalities < 2:
            raise ConfigMismatch("MIFA needs at least two modalities")
        if self.channels < 1 or self.blocks < 0 or self.in_channels < 1:
            raise ConfigMismatch("channel and block counts must be positive")
        if any(b < 0 or b >= self.blocks for b in self.downsample):
            raise ConfigMismatch(f"downsample indices {self.downsample} outside 0..{self.blocks - 1}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigMismatch("dropout must lie in [0, 1)")
        if self.task_weights is not None and len(self.task_weights) != self.tasks:
            raise WeightCountMismatch(f"{len(self.task_weights)} task weights for {self.tasks} tasks")

    @property
    def tasks(self) -> int:
        return len(self.classes_per_task)

    @property
    def use_hifa(self) -> bool:
        return self.mfa and self.hifa

    @property
    def use_clia(self) -> bool:
        return self.mfa and self.clia

    @property
    def use_mgifa(self) -> bool:
        return self.mifa and self.mgifa

    @property
    def use_mlifa(self) -> bool:
        return self.mifa and self.mlifa

    @property
    def use_mifa(self) -> bool:
        return self.use_mgifa or self.use_mlifa

    @property
    def out_channels(self) -> int:
        return self.channels * 2 ** len(self.downsample)

    def weights(self) -> tuple[float, ...]:
        if self.task_weights is not None:
            return self.task_weights
        return tuple(1.0 / self.tasks for _ in range(self.tasks))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["downsample"] = list(self.downsample)
        d["classes_per_task"] = list(self.classes_per_task)
        d["task_weights"] = None if self.task_weights is None else list(self.task_weights)
        return d

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


class RraBlock(Module):
    """Residual block: relu(conv) -> MFA -> relu(conv) -> MFA, plus a skip path.

    A block with stride 2 halves H and W, doubles C, and projects the skip path
    with a strided 1x1 convolution.
    """

    def __init__(self, c_in: int, c_out: int, stride: int, rng: np.random.Generator, mfa_kwargs: dict, dtype=None):
        self.conv1 = Conv2d(c_in, c_out, 3, rng, stride=stride, dtype=dtype)
        self.mfa1 = Mfa(c_out, rng, dtype=dtype, **mfa_kwargs)
        self.conv2 = Conv2d(c_out, c_out, 3, rng, dtype=dtype)
        self.mfa2 = Mfa(c_out, rng, dtype=dtype, **mfa_kwargs)
        self.skip = None
        if stride != 1 or c_in != c_out:
            self.skip = Conv2d(c_in, c_out, 1, rng, stride=stride, bias=False, dtype=dtype)

    def forward(self, x: Tensor, taps: list | None = None) -> Tensor:
        h = self.mfa1(T.relu(self.conv1(x)), taps)
        h = self.mfa2(T.relu(self.conv2(h)), taps)
        shortcut = x if self.skip is None else self.skip(x)
        if shortcut.shape != h.shape:
            raise ShapeMismatch(f"residual paths disagree: {shortcut.shape} vs {h.shape}")
        return T.add(shortcut, h)


def rra_forward(x: Tensor, block: RraBlock, taps: list | None = None) -> Tensor:
    return block(x, taps)


class Branch(Module):
    def __init__(self, config: DrifaNetConfig, rng: np.random.Generator, dtype=None):
        mfa_kwargs = dict(hifa=config.use_hifa, clia=config.use_clia,
                          omega_d=config.omega_d, omega_l=config.omega_l, omega_c=config.omega_c)
        c = config.channels
        self.stem = Conv2d(config.in_channels, c, 3, rng, dtype=dtype)
        self.rra = []
        for i in range(config.blocks):
            stride = 2 if i in config.downsample else 1
            c_out = c * stride
            self.rra.append(RraBlock(c, c_out, stride, rng, mfa_kwargs, dtype=dtype))
            c = c_out
        self.refine = Mfa(c, rng, dtype=dtype, **mfa_kwargs)

    def forward(self, x: Tensor, taps: list | None = None) -> Tensor:
        h = T.relu(self.stem(x))
        for block in self.rra:
            h = block(h, taps)
        return self.refine(h, taps)


@dataclass
class NetOutput:
    logits: list[Tensor]
    x_prime: list[Tensor] = field(default_factory=list)
    x_s: list[Tensor] = field(default_factory=list)
    A: Tensor | None = None
    features: Tensor | None = None
    mfa_maps: list[list[Tensor]] = field(default_factory=list)


class DrifaNet(Module):
    def __init__(self, config: DrifaNetConfig, dtype=None):
        config.validate()
        self._config = config
        rng = np.random.default_rng(config.seed)
        self.branch = [Branch(config, rng, dtype=dtype) for _ in range(config.modalities)]
        self.mifa = Mifa(config.out_channels, config.modalities, rng,
                         mgifa=config.use_mgifa, mlifa=config.use_mlifa,
                         omega_dm=config.omega_dm, omega_lm=config.omega_lm, omega_cm=config.omega_cm,
                         dtype=dtype)
        width = config.modalities * config.out_channels
        self.head = [Linear(width, n, rng, dtype=dtype) for n in config.classes_per_task]
        self.assign_names()

    @property
    def config(self) -> DrifaNetConfig:
        return self._config

    def named_parameters(self, prefix: str = ""):
        # "branch0", not "branch.0", matches the documented checkpoint names
        for i, b in enumerate(self.branch):
            yield from b.named_parameters(f"{prefix}branch{i}.")
        yield from self.mifa.named_parameters(prefix + "mifa.")
        for i, h in enumerate(self.head):
            yield from h.named_parameters(f"{prefix}head{i}.")

    def _check_inputs(self, inputs: Sequence[Tensor]) -> list[Tensor]:
        cfg = self._config
        if len(inputs) != cfg.modalities:
            raise ConfigMismatch(f"expected {cfg.modalities} modalities, got {len(inputs)}")
        xs = [x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype)) for x in inputs]
        for x in xs:
            if x.ndim != 4 or x.shape[3] != cfg.in_channels:
                raise ConfigMismatch(f"modality input {x.shape} does not match {cfg.in_channels} channels")
            if x.shape != xs[0].shape:
                raise ConfigMismatch("modalities must share N, H and W")
        return xs

    @property
    def dtype(self):
        return self.branch[0].stem.weight.dtype

    def encode(self, inputs: Sequence[Tensor]) -> NetOutput:
        """Everything up to the pooled, concatenated head input (deterministic)."""
        xs = self._check_inputs(inputs)
        out = NetOutput(logits=[])
        for x, branch in zip(xs, self.branch):
            maps: list[Tensor] = []
            out.x_prime.append(branch(x, maps))
            out.mfa_maps.append(maps)
        taps: dict = {}
        out.x_s = self.mifa(out.x_prime, taps) if self._config.use_mifa else list(out.x_prime)
        out.A = taps.get("A")
        n, c = out.x_s[0].shape[0], out.x_s[0].shape[3]
        pooled = [T.reshape(T.pool("avg", "global", f), (n, c)) for f in out.x_s]
        out.features = T.concat(pooled, axis=1)
        return out

    def classify(self, features: Tensor, training: bool = False, rng: np.random.Generator | None = None,
                 dropout: float | None = None) -> list[Tensor]:
        rate = self._config.dropout if dropout is None else dropout
        feat = T.dropout(features, rate, rng, training)
        return [head(feat) for head in self.head]

    def forward(self, inputs: Sequence[Tensor], training: bool = False,
                rng: np.random.Generator | None = None, dropout: float | None = None) -> NetOutput:
        out = self.encode(inputs)
        out.logits = self.classify(out.features, training, rng, dropout)
        return out


def mtl_loss(logits: Sequence[Tensor], labels, task_weights: Sequence[float]) -> tuple[Tensor, list[float]]:
    """Weighted sum of per-task cross-entropies; also returns each task's unweighted CE."""
    if len(task_weights) != len(logits):
        raise WeightCountMismatch(f"{len(task_weights)} weights for {len(logits)} tasks")
    if any(w < 0 for w in task_weights):
        raise WeightCountMismatch("task weights must be non-negative")
    labels = _per_task_labels(labels, len(logits))
    total = None
    parts = []
    for z, y, w in zip(logits, labels, task_weights):
        ce = T.cross_entropy(z, y)
        parts.append(ce.item())
        term = T.mul(ce, float(w))
        total = term if total is None else T.add(total, term)
    return total, parts


def _per_task_labels(labels, tasks: int) -> list[np.ndarray]:
    if isinstance(labels, np.ndarray) and labels.ndim == 2:
        cols = [labels[:, k] for k in range(labels.shape[1])]
    else:
        cols = [np.asarray(y) for y in labels]
    if len(cols) != tasks:
        raise WeightCountMismatch(f"labels for {len(cols)} tasks, model has {tasks}")
    return cols


def saliency(model: DrifaNet, inputs: Sequence, task: int, cls: int) -> list[np.ndarray]:
    """Gradient-weighted class activation maps at each modality's final features.

    For each modality: channel weights are the spatial mean of d logit[task, cls]
    / d features; the map is relu(sum_c weight_c * feature_c), scaled so each
    image's maximum is 1 (all-zero maps stay zero).
    """
    cfg = model.config
    if not 0 <= task < cfg.tasks:
        raise InvalidTaskOrClass(f"task {task} not in [0, {cfg.tasks})")
    if not 0 <= cls < cfg.classes_per_task[task]:
        raise InvalidTaskOrClass(f"class {cls} not in [0, {cfg.classes_per_task[task]})")
    xs = model._check_inputs(inputs)
    out = model.forward(xs, training=False)
    for f in out.x_s:
        f.requires_grad = True  # keep a gradient even if upstream is frozen
    onehot = np.zeros((1, cfg.classes_per_task[task]), dtype=model.dtype)
    onehot[0, cls] = 1.0
    target = T.tsum(T.mul(out.logits[task], onehot))
    feats = [f.data for f in out.x_s]
    target.backward()
    maps = []
    for f, data in zip(out.x_s, feats):
        g = f.grad if f.grad is not None else np.zeros_like(data)
        weights = g.mean(axis=(1, 2), keepdims=True)
        cam = np.maximum((data * weights).sum(axis=3), 0.0)
        peak = cam.reshape(cam.shape[0], -1).max(axis=1)
        scale = np.where(peak > 0, peak, 1.0)
        maps.append(cam / scale[:, None, None])
    model.zero_grad()
    return maps
