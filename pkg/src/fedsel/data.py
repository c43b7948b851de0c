"""Synthetic dataset generation, non-IID partitioning, and CSV ingestion.

A dataset is three Batches (train/validation/test, split 80/10/10) with
features standardized against train-split statistics. The validation split
is server-held: it feeds the oracle and the pairwise study labels.

Partitioning splits only the train batch across clients, either into
label-sorted shards (``shards_per_client`` per client) or by per-client
Dirichlet label mixtures.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    EmptyDatasetError,
    ParseError,
    SchemaError,
)
from .model import Batch
from .seeds import stream

PARTITION_MODES = ("shard", "dirichlet")


@dataclass(frozen=True)
class LabeledDataset:
    train: Batch
    val: Batch
    test: Batch
    num_classes: int

    @property
    def dim(self) -> int:
        return self.train.features.shape[1]


@dataclass(frozen=True)
class PartitionSpec:
    num_clients: int
    mode: str
    shards_per_client: int | None = None
    alpha: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.num_clients < 2:
            raise ConfigError(f"need at least 2 clients, got {self.num_clients}")
        if self.mode not in PARTITION_MODES:
            raise ConfigError(f"unknown partition mode {self.mode!r}; expected {PARTITION_MODES}")
        if self.mode == "shard" and (self.shards_per_client is None or self.shards_per_client < 1):
            raise ConfigError("shard mode needs shards_per_client >= 1")
        if self.mode == "dirichlet" and (self.alpha is None or self.alpha <= 0):
            raise ConfigError("dirichlet mode needs alpha > 0")


@dataclass(frozen=True, eq=False)
class ClientDataset:
    client_id: int
    train: Batch
    mixing: np.ndarray

    def __post_init__(self):
        mix = np.array(self.mixing, dtype=np.float64)
        if mix.ndim != 1 or np.any(mix < 0) or abs(float(mix.sum()) - 1.0) > 1e-12:
            raise SchemaError("mixing must be a probability vector over classes")
        mix.setflags(write=False)
        object.__setattr__(self, "mixing", mix)


def _split_bounds(n: int) -> tuple[int, int]:
    return int(n * 0.8), int(n * 0.9)


def _standardize(train: np.ndarray, others: list[np.ndarray]) -> list[np.ndarray]:
    """Zero-mean/unit-variance per column using train statistics.

    Constant columns are left centered but unscaled.
    """
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    return [(arr - mean) / std for arr in [train, *others]]


def _assemble(features: np.ndarray, labels: np.ndarray, standardize: bool) -> LabeledDataset:
    n = features.shape[0]
    t_end, v_end = _split_bounds(n)
    if t_end < 1 or v_end - t_end < 1 or n - v_end < 1:
        raise ConfigError(f"{n} samples are too few for an 80/10/10 split")
    parts = [features[:t_end], features[t_end:v_end], features[v_end:]]
    if standardize:
        parts = _standardize(parts[0], parts[1:])
    num_classes = int(labels.max()) + 1
    return LabeledDataset(
        train=Batch(parts[0], labels[:t_end]),
        val=Batch(parts[1], labels[t_end:v_end]),
        test=Batch(parts[2], labels[v_end:]),
        num_classes=num_classes,
    )


def generate_synthetic(
    classes: int,
    dim: int,
    per_class: int,
    spread: float,
    seed: int,
    standardize: bool = True,
) -> LabeledDataset:
    """Gaussian blobs around random unit-norm class means, shuffled and split."""
    if classes < 2 or dim < 2 or per_class < 10:
        raise ConfigError(
            f"need classes >= 2, dim >= 2, per_class >= 10; got {classes}, {dim}, {per_class}"
        )
    if spread < 0:
        raise ConfigError(f"spread must be non-negative, got {spread}")
    rng = stream(seed, "data")
    means = rng.normal(size=(classes, dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    features = np.repeat(means, per_class, axis=0) + spread * rng.normal(
        size=(classes * per_class, dim)
    )
    labels = np.repeat(np.arange(classes), per_class)
    order = rng.permutation(classes * per_class)
    return _assemble(features[order], labels[order], standardize)


def partition_shards(dataset: LabeledDataset, spec: PartitionSpec) -> list[ClientDataset]:
    """Label-sorted contiguous shards, S per client, assigned at random.

    Shard sizes differ by at most one sample so the shards always cover the
    train split exactly; a shard may straddle one label boundary when class
    counts do not divide evenly.
    """
    if spec.mode != "shard":
        raise ConfigError(f"partition_shards called with mode {spec.mode!r}")
    train = dataset.train
    k, s = spec.num_clients, spec.shards_per_client
    n_shards = k * s
    if n_shards > train.size:
        raise ConfigError(f"{n_shards} shards exceed {train.size} training samples")
    order = np.argsort(train.labels, kind="stable")
    shard_indices = np.array_split(order, n_shards)
    rng = stream(spec.seed, "partition")
    dealt = rng.permutation(n_shards)
    clients = []
    for client_id in range(k):
        own = np.sort(np.concatenate([shard_indices[i] for i in dealt[client_id * s : (client_id + 1) * s]]))
        labels = train.labels[own]
        mixing = np.bincount(labels, minlength=dataset.num_classes) / own.size
        clients.append(
            ClientDataset(client_id, Batch(train.features[own], labels), mixing)
        )
    return clients


def partition_dirichlet(dataset: LabeledDataset, spec: PartitionSpec) -> list[ClientDataset]:
    """Per-client Dirichlet(alpha) label mixtures.

    Each sample of class j goes to client k with probability proportional to
    the k-th mixture weight for j. Empty clients are topped up with one
    sample taken at random from the currently largest client.
    """
    if spec.mode != "dirichlet":
        raise ConfigError(f"partition_dirichlet called with mode {spec.mode!r}")
    train = dataset.train
    k = spec.num_clients
    rng = stream(spec.seed, "partition")
    mixture = rng.dirichlet(np.full(dataset.num_classes, spec.alpha), size=k)

    assignment = np.empty(train.size, dtype=np.int64)
    for cls in range(dataset.num_classes):
        idx = np.flatnonzero(train.labels == cls)
        if idx.size == 0:
            continue
        probs = mixture[:, cls]
        probs = probs / probs.sum()
        assignment[idx] = rng.choice(k, size=idx.size, p=probs)

    counts = np.bincount(assignment, minlength=k)
    while np.any(counts == 0):
        empty = int(np.argmin(counts))
        donor = int(np.argmax(counts))
        donor_samples = np.flatnonzero(assignment == donor)
        moved = donor_samples[rng.integers(donor_samples.size)]
        assignment[moved] = empty
        counts = np.bincount(assignment, minlength=k)

    clients = []
    for client_id in range(k):
        own = np.flatnonzero(assignment == client_id)
        labels = train.labels[own]
        mixing = np.bincount(labels, minlength=dataset.num_classes) / own.size
        clients.append(
            ClientDataset(client_id, Batch(train.features[own], labels), mixing)
        )
    return clients


def partition(dataset: LabeledDataset, spec: PartitionSpec) -> list[ClientDataset]:
    if spec.mode == "shard":
        return partition_shards(dataset, spec)
    return partition_dirichlet(dataset, spec)


def load_csv(path: str | Path) -> LabeledDataset:
    """Read ``label,f1,...,fd`` rows (header required) and split/standardize.

    The split is positional (first 80% train), so files written by save_csv
    round-trip exactly.
    """
    path = Path(path)
    features: list[list[float]] = []
    labels: list[int] = []
    dim: int | None = None
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyDatasetError(f"{path} is empty") from None
        if not header or header[0].strip() != "label":
            raise SchemaError(f"{path}: first header column must be 'label', got {header[:1]}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if dim is None:
                dim = len(row) - 1
                if dim < 1:
                    raise SchemaError(f"{path}: rows need at least one feature column")
            elif len(row) - 1 != dim:
                raise SchemaError(
                    f"{path}: line {line_no} has {len(row) - 1} features, expected {dim}"
                )
            try:
                label = int(row[0])
                values = [float(tok) for tok in row[1:]]
            except ValueError as exc:
                raise ParseError(f"{path}: {exc}", line=line_no) from None
            if label < 0:
                raise SchemaError(f"{path}: line {line_no} has negative label {label}")
            labels.append(label)
            features.append(values)
    if not features:
        raise EmptyDatasetError(f"{path} has a header but no data rows")
    return _assemble(
        np.asarray(features, dtype=np.float64),
        np.asarray(labels, dtype=np.int64),
        standardize=True,
    )


def save_csv(dataset: LabeledDataset, path: str | Path) -> None:
    """Write train/val/test rows (in that order) in the load_csv schema."""
    path = Path(path)
    dim = dataset.dim
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label"] + [f"f{i + 1}" for i in range(dim)])
        for batch in (dataset.train, dataset.val, dataset.test):
            for label, row in zip(batch.labels, batch.features):
                writer.writerow([int(label)] + [repr(float(v)) for v in row])
