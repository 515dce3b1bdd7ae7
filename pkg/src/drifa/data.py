"""
Synthetic multimodal datasets, augmentation, stratified splits and on-disk exchange.

For every task, each sample carries one of two kinds of planted evidence:

* redundant: an oriented-bar template for the class label, identical in every
  modality;
* complementary: each modality shows a blob coding one digit (polarity, then
  quadrant). The digits are uniform and independent of the label except that
  they sum to the label modulo the class count, so only the full set of
  modalities determines the class.

``shared_signal_strength`` is the probability that a sample's evidence is
redundant. At zero noise a single modality therefore identifies the class on
exactly that fraction of samples. Gaussian noise is added on top.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import BadFractions, DataNotFound, InvalidSpec, NonSquareRotation

MAX_CLASSES = 8
TRANSFORMS = ("rotate90", "flip_h", "flip_v")


@dataclass
class SyntheticSpec:
    modalities: int = 2
    tasks: int = 1
    classes_per_task: tuple[int, ...] = (2,)
    samples_per_class: int = 50
    image_size: tuple[int, int, int] = (8, 8, 1)
    shared_signal_strength: float = 1.0
    noise_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.classes_per_task = tuple(int(n) for n in self.classes_per_task)
        self.image_size = tuple(int(s) for s in self.image_size)

    def validate(self) -> None:
        if self.modalities < 1:
            raise InvalidSpec("need at least one modality")
        if self.tasks != len(self.classes_per_task) or self.tasks < 1:
            raise InvalidSpec(f"tasks={self.tasks} but classes_per_task={self.classes_per_task}")
        if any(n < 2 or n > MAX_CLASSES for n in self.classes_per_task):
            raise InvalidSpec(f"class counts must lie in [2, {MAX_CLASSES}]")
        if self.samples_per_class < 1:
            raise InvalidSpec("samples_per_class must be positive")
        if len(self.image_size) != 3 or min(self.image_size) < 1 or min(self.image_size[:2]) < 4:
            raise InvalidSpec(f"image_size must be (H>=4, W>=4, C>=1), got {self.image_size}")
        if not 0.0 <= self.shared_signal_strength <= 1.0:
            raise InvalidSpec("shared_signal_strength must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise InvalidSpec("noise_sigma must be non-negative")


@dataclass
class Record:
    id: int
    inputs: list[np.ndarray]  # one H x W x C array per modality
    labels: tuple[int, ...]


@dataclass
class MultimodalBatch:
    inputs: list[np.ndarray]  # m arrays N x H x W x C
    labels: list[np.ndarray]  # t integer arrays of length N
    modality_ids: tuple[int, ...] = ()
    task_ids: tuple[int, ...] = ()


@dataclass
class MultimodalDataset:
    inputs: list[np.ndarray]  # m arrays S x H x W x C
    labels: np.ndarray  # S x t
    ids: np.ndarray
    classes_per_task: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def modalities(self) -> int:
        return len(self.inputs)

    @property
    def image_size(self) -> tuple[int, int, int]:
        return tuple(self.inputs[0].shape[1:])

    def subset(self, index) -> "MultimodalDataset":
        index = np.asarray(index, dtype=np.int64)
        return MultimodalDataset([x[index] for x in self.inputs], self.labels[index],
                                 self.ids[index], self.classes_per_task)

    def batch(self, index=None) -> MultimodalBatch:
        ds = self if index is None else self.subset(index)
        return MultimodalBatch(
            inputs=list(ds.inputs),
            labels=[ds.labels[:, k] for k in range(ds.labels.shape[1])],
            modality_ids=tuple(range(ds.modalities)),
            task_ids=tuple(range(ds.labels.shape[1])),
        )

    def record(self, k: int) -> Record:
        return Record(int(self.ids[k]), [x[k] for x in self.inputs], tuple(int(v) for v in self.labels[k]))

    @classmethod
    def from_records(cls, records: Sequence[Record], classes_per_task) -> "MultimodalDataset":
        m = len(records[0].inputs)
        return cls(
            inputs=[np.stack([r.inputs[i] for r in records]) for i in range(m)],
            labels=np.array([r.labels for r in records], dtype=np.int64),
            ids=np.array([r.id for r in records], dtype=np.int64),
            classes_per_task=tuple(classes_per_task),
        )


def bar_template(index: int, h: int, w: int) -> np.ndarray:
    """Oriented bar through the centre: horizontal, vertical, diagonal, anti-diagonal;
    indices 4..7 repeat them with negative polarity."""
    rows, cols = np.mgrid[0:h, 0:w]
    y = (rows + 0.5) / h - 0.5
    x = (cols + 0.5) / w - 0.5
    half = 0.5 / min(h, w) + 0.06
    orientation = index % 4
    if orientation == 0:
        t = np.abs(y) < half
    elif orientation == 1:
        t = np.abs(x) < half
    elif orientation == 2:
        t = np.abs(y - x) < 1.5 * half
    else:
        t = np.abs(y + x) < 1.5 * half
    sign = 1.0 if index < 4 else -1.0
    return sign * t.astype(np.float64)


def blob_template(quadrant: int, h: int, w: int, sign: float = 1.0) -> np.ndarray:
    """Gaussian blob centred in ``quadrant`` (0..3 = TL, TR, BL, BR), peak ``sign``."""
    cy = (0.25 if quadrant < 2 else 0.75) * h - 0.5
    cx = (0.25 if quadrant % 2 == 0 else 0.75) * w - 0.5
    rows, cols = np.mgrid[0:h, 0:w]
    sigma = max(h, w) / 8.0
    blob = np.exp(-((rows - cy) ** 2 + (cols - cx) ** 2) / (2 * sigma**2))
    return sign * blob / blob.max()


def code_template(digit: int, h: int, w: int) -> np.ndarray:
    """Template for a complementary code digit: polarity first, then quadrant.

    Digits 0 and 1 differ only in sign, which survives global pooling; higher
    digits move the blob to another quadrant.
    """
    return blob_template(digit // 2, h, w, sign=-1.0 if digit % 2 else 1.0)


def _task_channels(task: int, tasks: int, channels: int) -> list[int]:
    groups = min(tasks, channels)
    return [c for c in range(channels) if c % groups == task % groups]


def code_digits(label: int, classes: int, modalities: int, rng: np.random.Generator) -> list[int]:
    """Uniform digits whose sum is ``label`` modulo ``classes``."""
    digits = [int(d) for d in rng.integers(0, classes, size=modalities - 1)]
    digits.append((label - sum(digits)) % classes)
    return digits


def generate(spec: SyntheticSpec) -> MultimodalDataset:
    spec.validate()
    h, w, c = spec.image_size
    n0 = spec.classes_per_task[0]
    total = n0 * spec.samples_per_class
    s = spec.shared_signal_strength
    bars = np.stack([bar_template(k, h, w) for k in range(MAX_CLASSES)])
    blobs = np.stack([code_template(k, h, w) for k in range(MAX_CLASSES)])
    inputs = [np.zeros((total, h, w, c), dtype=np.float32) for _ in range(spec.modalities)]
    labels = np.zeros((total, spec.tasks), dtype=np.int64)
    for k in range(total):
        rng = np.random.default_rng([spec.seed, k])
        y = [k // spec.samples_per_class] + [int(rng.integers(0, n)) for n in spec.classes_per_task[1:]]
        labels[k] = y
        planes = np.zeros((spec.modalities, h, w, c))
        for task, (label, classes) in enumerate(zip(y, spec.classes_per_task)):
            redundant = rng.random() < s
            digits = code_digits(label, classes, spec.modalities, rng)
            chans = _task_channels(task, spec.tasks, c)
            for i in range(spec.modalities):
                pattern = bars[label] if redundant else blobs[digits[i]]
                planes[i][:, :, chans] += pattern[:, :, None]
        noise = rng.standard_normal(planes.shape) * spec.noise_sigma
        for i in range(spec.modalities):
            inputs[i][k] = planes[i] + noise[i]
    return MultimodalDataset(inputs, labels, np.arange(total, dtype=np.int64), spec.classes_per_task)


def generate_planted(quadrant: int, modalities: int = 2, samples_per_class: int = 40,
                     size: int = 16, noise_sigma: float = 0.3, seed: int = 0) -> MultimodalDataset:
    """Two classes told apart only by the polarity of a blob in one fixed quadrant."""
    total = 2 * samples_per_class
    blob = blob_template(quadrant, size, size)
    inputs = [np.zeros((total, size, size, 1), dtype=np.float32) for _ in range(modalities)]
    labels = np.zeros((total, 1), dtype=np.int64)
    for k in range(total):
        rng = np.random.default_rng([seed, k])
        y = k // samples_per_class
        labels[k, 0] = y
        sign = 1.0 if y == 1 else -1.0
        for i in range(modalities):
            inputs[i][k, :, :, 0] = sign * blob + rng.standard_normal((size, size)) * noise_sigma
    return MultimodalDataset(inputs, labels, np.arange(total, dtype=np.int64), (2,))


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

def apply_transform(record: Record, op: str) -> Record:
    """Apply one geometric transform identically to every modality of a sample."""
    if op == "rotate90":
        if any(x.shape[0] != x.shape[1] for x in record.inputs):
            raise NonSquareRotation("rotate90 needs square images")
        out = [np.rot90(x, k=1, axes=(0, 1)) for x in record.inputs]
    elif op == "flip_h":
        out = [x[:, ::-1] for x in record.inputs]
    elif op == "flip_v":
        out = [x[::-1, :] for x in record.inputs]
    else:
        raise ValueError(f"unknown transform {op!r}; choose from {TRANSFORMS}")
    return Record(record.id, [np.ascontiguousarray(x) for x in out], record.labels)


def augment(record: Record, ops: Sequence[str], rng: np.random.Generator) -> Record:
    """Label-preserving random transform: one op drawn from ``ops``, same for all modalities."""
    ops = list(ops)
    if not ops:
        return record
    return apply_transform(record, ops[int(rng.integers(0, len(ops)))])


def balance(dataset: MultimodalDataset, ops: Sequence[str], rng: np.random.Generator) -> MultimodalDataset:
    """Top up every first-task class to the majority count with augmented copies."""
    y = dataset.labels[:, 0]
    counts = np.bincount(y, minlength=dataset.classes_per_task[0])
    target = counts.max()
    records = [dataset.record(k) for k in range(len(dataset))]
    next_id = int(dataset.ids.max()) + 1 if len(dataset) else 0
    for cls, count in enumerate(counts):
        members = np.flatnonzero(y == cls)
        if count == 0:
            continue
        for j in range(target - count):
            src = dataset.record(int(members[j % count]))
            new = augment(src, ops, rng)
            records.append(Record(next_id, new.inputs, new.labels))
            next_id += 1
    return MultimodalDataset.from_records(records, dataset.classes_per_task)


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

@dataclass
class DatasetSplit:
    train: MultimodalDataset
    val: MultimodalDataset
    test: MultimodalDataset
    fractions: tuple[float, float, float] = field(default=(0.8, 0.1, 0.1))


def split(dataset: MultimodalDataset, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> DatasetSplit:
    """Stratified (by the first task's label) deterministic train/val/test split."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise BadFractions(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    y = dataset.labels[:, 0]
    parts: list[list[int]] = [[], [], []]
    for cls in range(dataset.classes_per_task[0]):
        members = np.flatnonzero(y == cls)
        members = members[rng.permutation(len(members))]
        n_train = int(round(fractions[0] * len(members)))
        n_val = min(int(round(fractions[1] * len(members))), len(members) - n_train)
        parts[0].extend(members[:n_train])
        parts[1].extend(members[n_train:n_train + n_val])
        parts[2].extend(members[n_train + n_val:])
    train, val, test = (dataset.subset(np.sort(np.array(p, dtype=np.int64))) for p in parts)
    return DatasetSplit(train, val, test, fractions)


# ---------------------------------------------------------------------------
# on-disk exchange
# ---------------------------------------------------------------------------

MANIFEST = "manifest.csv"


def export_dataset(dataset: MultimodalDataset, directory: str | Path) -> Path:
    """Write one raw little-endian float32 file per sample per modality plus a CSV manifest."""
    root = Path(directory)
    (root / "samples").mkdir(parents=True, exist_ok=True)
    h, w, c = dataset.image_size
    m, t = dataset.modalities, dataset.labels.shape[1]
    with open(root / MANIFEST, "w", newline="") as fh:
        fh.write("# classes_per_task=" + ",".join(str(n) for n in dataset.classes_per_task) + "\n")
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "height", "width", "channels"]
                        + [f"mod{i}" for i in range(m)] + [f"task{k}" for k in range(t)])
        for k in range(len(dataset)):
            sid = int(dataset.ids[k])
            paths = []
            for i in range(m):
                rel = f"samples/{sid:06d}_mod{i}.f32"
                dataset.inputs[i][k].astype("<f4").tofile(root / rel)
                paths.append(rel)
            writer.writerow([sid, h, w, c] + paths + [int(v) for v in dataset.labels[k]])
    return root / MANIFEST


def load_dataset(directory: str | Path) -> MultimodalDataset:
    """Read a directory written by :func:`export_dataset` (or laid out the same way by hand)."""
    root = Path(directory)
    manifest = root / MANIFEST
    if not manifest.is_file():
        raise DataNotFound(f"no {MANIFEST} in {root}")
    with open(manifest, newline="") as fh:
        lines = fh.read().splitlines()
    classes = None
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            if key == "classes_per_task":
                classes = tuple(int(v) for v in value.split(","))
        elif line.strip():
            body.append(line)
    reader = csv.DictReader(body)
    mods = [f for f in reader.fieldnames if f.startswith("mod")]
    tasks = [f for f in reader.fieldnames if f.startswith("task")]
    records = []
    for row in reader:
        shape = (int(row["height"]), int(row["width"]), int(row["channels"]))
        arrays = []
        for mod in mods:
            path = root / row[mod]
            if not path.is_file():
                raise DataNotFound(f"missing sample file {path}")
            arrays.append(np.fromfile(path, dtype="<f4").reshape(shape).astype(np.float32))
        records.append(Record(int(row["sample_id"]), arrays, tuple(int(row[t]) for t in tasks)))
    if not records:
        raise DataNotFound(f"{manifest} lists no samples")
    labels = np.array([r.labels for r in records])
    if classes is None:
        classes = tuple(int(v) + 1 for v in labels.max(axis=0))
    return MultimodalDataset.from_records(records, classes)
