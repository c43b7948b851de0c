"""Pairwise feature study.

For a grid of (round, heterogeneity, seed) conditions, every unordered client
pair's hypothetical one-round update is scored on the validation split. Pair
features (power cosines, norm sums, distance, coordinate moments) become the
inputs of a logistic regression whose soft labels are the per-condition
scaled outcomes; the fitted |weight| ranking says which single feature best
predicts a good pair. Relative-loss tables report, per condition, how close a
feature-driven choice lands to the best possible pair.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import model as model_mod
from .data import PartitionSpec, partition
from .errors import ConfigError, DegenerateGradientError, DegenerateStatisticError
from .federation import DataSpec, EtaSchedule, ModelSpec
from .numerics import (
    GradientVector,
    covariance,
    kurtosis,
    lp_norm,
    pearson,
    power_cosine,
)
from .selection import select_random

log = logging.getLogger("fedsel.study")

FEATURE_NAMES = (
    "cos_1",
    "cos_2",
    "cos_4",
    "norm_sum_1",
    "norm_sum_2",
    "norm_sum_4",
    "l2_distance",
    "kurtosis_sum",
    "covariance",
    "pearson",
)
COSINE_FEATURES = ("cos_1", "cos_2", "cos_4")
NORM_SUM_FEATURES = ("norm_sum_1", "norm_sum_2", "norm_sum_4")

SCALERS = ("minmax", "softmax")
LABEL_SOURCES = ("accuracy", "loss")

GD_STEP = 0.1
GD_TOL = 1e-8
GD_MAX_ITERS = 50_000


class ConditionKey(NamedTuple):
    round_index: int
    heterogeneity: int
    seed: int


@dataclass
class PairSample:
    condition: ConditionKey
    pair: tuple[int, int]
    features: dict[str, float]
    raw_outcome: float  # validation accuracy after the pair's hypothetical update
    label: float | None = None


def extract_features(g: GradientVector, g2: GradientVector) -> dict[str, float]:
    """Symmetric whole-vector pair features, in fixed FEATURE_NAMES order."""
    u = g.concat()
    v = g2.concat()
    feats = {}
    for p in (1, 2, 4):
        feats[f"cos_{p}"] = power_cosine(u, v, p, "powered")
    for p in (1, 2, 4):
        feats[f"norm_sum_{p}"] = lp_norm(u, p) + lp_norm(v, p)
    feats["l2_distance"] = lp_norm(u - v, 2)
    feats["kurtosis_sum"] = kurtosis(u) + kurtosis(v)
    feats["covariance"] = covariance(u, v)
    feats["pearson"] = pearson(u, v)
    return feats


def scale_labels(raw: Sequence[float], scaler: str = "minmax", temperature: float = 1.0) -> np.ndarray:
    """Map one condition's raw outcomes into [0, 1].

    minmax is affine (constant vectors map to all 0.5); softmax normalizes
    exp(raw / temperature) and rescales so the best outcome gets exactly 1.
    """
    values = np.asarray(raw, dtype=np.float64)
    if values.size == 0:
        raise ConfigError("cannot scale an empty outcome vector")
    if scaler == "minmax":
        low, high = float(values.min()), float(values.max())
        if high == low:
            return np.full(values.shape, 0.5)
        return (values - low) / (high - low)
    if scaler == "softmax":
        if temperature <= 0:
            raise ConfigError(f"softmax temperature must be > 0, got {temperature}")
        shifted = np.exp((values - values.max()) / temperature)
        probs = shifted / shifted.sum()
        return probs / probs.max()
    raise ConfigError(f"unknown scaler {scaler!r}; expected one of {SCALERS}")


@dataclass(frozen=True)
class StudyConfig:
    num_clients: int = 8
    rounds: int = 5
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    heterogeneity: tuple[int, ...] = (1,)  # shards per client
    clients_per_round: int = 2
    data: DataSpec = field(default_factory=lambda: DataSpec(classes=8, dim=32, per_class=100))
    model: ModelSpec = field(default_factory=ModelSpec)
    eta: EtaSchedule = field(default_factory=EtaSchedule)
    label_source: str = "accuracy"
    scaler: str = "minmax"
    softmax_temperature: float = 1.0
    regularization: float = 1e-3

    def __post_init__(self):
        if self.num_clients < 3:
            raise ConfigError("study needs at least 3 clients")
        if self.rounds < 1 or not self.seeds or not self.heterogeneity:
            raise ConfigError("study needs rounds >= 1 and non-empty seeds/heterogeneity")
        if self.label_source not in LABEL_SOURCES:
            raise ConfigError(f"unknown label source {self.label_source!r}")
        if self.scaler not in SCALERS:
            raise ConfigError(f"unknown scaler {self.scaler!r}")
        if self.regularization < 0:
            raise ConfigError("regularization must be >= 0")


PairTable = dict[tuple[int, int], tuple[float, float]]  # pair -> (val loss, val accuracy)


def build_pair_dataset(cfg: StudyConfig) -> tuple[list[PairSample], dict[ConditionKey, PairTable]]:
    """Enumerate pair outcomes along frozen random-selection trajectories.

    Per (heterogeneity, seed): train under random selection, and at each
    round evaluate every unordered pair's hypothetical update from the
    pre-update model. Pairs with degenerate features are dropped with a
    warning. Labels are filled per condition afterwards.
    """
    samples: list[PairSample] = []
    tables: dict[ConditionKey, PairTable] = {}
    dropped = 0
    for het in cfg.heterogeneity:
        for seed in cfg.seeds:
            dataset = cfg.data.load(seed)
            clients = partition(
                dataset,
                PartitionSpec(cfg.num_clients, "shard", shards_per_client=het, seed=seed),
            )
            arch = cfg.model.architecture(dataset.dim, dataset.num_classes)
            params = model_mod.init_params(arch, seed)
            for t in range(1, cfg.rounds + 1):
                eta = cfg.eta.at(t)
                gradients = [model_mod.gradient(params, c.train) for c in clients]
                condition = ConditionKey(t, het, seed)
                table: PairTable = {}
                for pair in combinations(range(cfg.num_clients), 2):
                    averaged = GradientVector.mean([gradients[k] for k in pair])
                    candidate = model_mod.apply_update(params, averaged, eta)
                    val_loss = model_mod.loss(candidate, dataset.val)
                    val_acc = model_mod.accuracy(candidate, dataset.val)
                    table[pair] = (val_loss, val_acc)
                    try:
                        feats = extract_features(gradients[pair[0]], gradients[pair[1]])
                    except (DegenerateGradientError, DegenerateStatisticError) as exc:
                        dropped += 1
                        log.warning("dropping pair %s at %s: %s", pair, condition, exc)
                        continue
                    samples.append(PairSample(condition, pair, feats, val_acc))
                tables[condition] = table
                # advance the shared trajectory under random selection
                decision = select_random(cfg.num_clients, cfg.clients_per_round, seed, t)
                step = GradientVector.mean([gradients[k] for k in decision.selected])
                params = model_mod.apply_update(params, step, eta)
    if dropped:
        log.warning("dropped %d degenerate pairs", dropped)
    _fill_labels(samples, tables, cfg)
    return samples, tables


def _fill_labels(
    samples: list[PairSample], tables: dict[ConditionKey, PairTable], cfg: StudyConfig
) -> None:
    by_condition: dict[ConditionKey, list[PairSample]] = {}
    for sample in samples:
        by_condition.setdefault(sample.condition, []).append(sample)
    for condition, group in by_condition.items():
        if cfg.label_source == "accuracy":
            raw = [s.raw_outcome for s in group]
        else:
            # lower loss is better, so negate before scaling
            raw = [-tables[condition][s.pair][0] for s in group]
        labels = scale_labels(raw, cfg.scaler, cfg.softmax_temperature)
        for sample, label in zip(group, labels):
            sample.label = float(label)


def logistic_loss(x: np.ndarray, y: np.ndarray, w: np.ndarray, regularization: float) -> float:
    """Mean binary cross-entropy of sigmoid(x @ w) plus L2 penalty."""
    z = x @ w
    # log(1 + exp(-|z|)) formulation is stable for large |z|
    log_p = -np.logaddexp(0.0, -z)
    log_1mp = -np.logaddexp(0.0, z)
    bce = -np.mean(y * log_p + (1.0 - y) * log_1mp)
    return float(bce + regularization * np.dot(w, w))


def logistic_gradient(x: np.ndarray, y: np.ndarray, w: np.ndarray, regularization: float) -> np.ndarray:
    probs = 1.0 / (1.0 + np.exp(-(x @ w)))
    return x.T @ (probs - y) / x.shape[0] + 2.0 * regularization * w


@dataclass
class LogisticFit:
    feature_names: tuple[str, ...]
    weights: np.ndarray  # in standardized-feature space
    feature_means: np.ndarray
    feature_stds: np.ndarray
    ranking: tuple[str, ...]  # by |weight|, descending
    iterations: int
    converged: bool
    final_grad_norm: float
    final_loss: float

    def rank_of(self, feature: str) -> int:
        """1-based rank (1 = largest |weight|)."""
        return self.ranking.index(feature) + 1


def fit_logistic(samples: Sequence[PairSample], regularization: float = 1e-3) -> LogisticFit:
    """Full-batch gradient descent on the BCE objective over standardized
    features; stops at gradient norm < 1e-8 or 50k iterations."""
    if not samples:
        raise ConfigError("cannot fit on an empty sample list")
    labels = np.asarray([s.label for s in samples], dtype=np.float64)
    if np.unique(labels).size < 2:
        raise ConfigError("need at least 2 distinct labels to fit")
    x = np.asarray([[s.features[name] for name in FEATURE_NAMES] for s in samples])
    means = x.mean(axis=0)
    stds = x.std(axis=0)
    stds = np.where(stds == 0.0, 1.0, stds)
    x = (x - means) / stds

    w = np.zeros(len(FEATURE_NAMES))
    grad_norm = math.inf
    iterations = 0
    for iterations in range(1, GD_MAX_ITERS + 1):
        grad = logistic_gradient(x, labels, w, regularization)
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm < GD_TOL:
            break
        w = w - GD_STEP * grad

    order = np.argsort(-np.abs(w), kind="stable")
    return LogisticFit(
        feature_names=FEATURE_NAMES,
        weights=w,
        feature_means=means,
        feature_stds=stds,
        ranking=tuple(FEATURE_NAMES[i] for i in order),
        iterations=iterations,
        converged=grad_norm < GD_TOL,
        final_grad_norm=grad_norm,
        final_loss=logistic_loss(x, labels, w, regularization),
    )


def relative_loss(
    table: PairTable, chosen: tuple[int, int]
) -> float:
    """(L_chosen - L_best) / (L_worst - L_best) in [0, 1]; 0 when degenerate."""
    losses = [loss for loss, _ in table.values()]
    best, worst = min(losses), max(losses)
    if worst == best:
        return 0.0
    return (table[chosen][0] - best) / (worst - best)


PairChooser = Callable[[list[PairSample]], tuple[int, int]]


def feature_argmin_chooser(feature: str) -> PairChooser:
    """Pick the pair with the most negative value of one feature."""

    def choose(group: list[PairSample]) -> tuple[int, int]:
        return min(group, key=lambda s: (s.features[feature], s.pair)).pair

    return choose


def relative_loss_table(
    samples: Sequence[PairSample],
    tables: dict[ConditionKey, PairTable],
    chooser: PairChooser,
) -> dict[ConditionKey, float]:
    """Per-condition regret ratio of the chooser's pair."""
    by_condition: dict[ConditionKey, list[PairSample]] = {}
    for sample in samples:
        by_condition.setdefault(sample.condition, []).append(sample)
    return {
        condition: relative_loss(tables[condition], chooser(group))
        for condition, group in sorted(by_condition.items())
    }


def round_bucket(round_index: int, total_rounds: int) -> int:
    """Quartile bucket (0..3) of the round index within the horizon."""
    return min(3, (round_index - 1) * 4 // total_rounds)


@dataclass
class BucketRow:
    heterogeneity: int
    bucket: int
    feature: str
    mean_relative_loss: float
    conditions: int


@dataclass
class StudyReport:
    config: StudyConfig
    fit: LogisticFit
    relative_losses: dict[str, dict[ConditionKey, float]]  # feature -> condition -> ratio
    buckets: list[BucketRow]
    samples: int
    dropped_pairs: int

    def to_json_dict(self) -> dict:
        return {
            "num_samples": self.samples,
            "dropped_pairs": self.dropped_pairs,
            "feature_names": list(self.fit.feature_names),
            "weights": [float(v) for v in self.fit.weights],
            "ranking": list(self.fit.ranking),
            "converged": self.fit.converged,
            "iterations": self.fit.iterations,
            "final_grad_norm": self.fit.final_grad_norm,
            "final_loss": self.fit.final_loss,
            "relative_loss_buckets": [
                {
                    "heterogeneity": row.heterogeneity,
                    "round_bucket": row.bucket,
                    "feature": row.feature,
                    "mean_relative_loss": row.mean_relative_loss,
                    "conditions": row.conditions,
                }
                for row in self.buckets
            ],
        }


def run_study(cfg: StudyConfig) -> StudyReport:
    samples, tables = build_pair_dataset(cfg)
    expected = (
        len(cfg.heterogeneity)
        * len(cfg.seeds)
        * cfg.rounds
        * math.comb(cfg.num_clients, 2)
    )
    fit = fit_logistic(samples, cfg.regularization)
    relative_losses = {
        feature: relative_loss_table(samples, tables, feature_argmin_chooser(feature))
        for feature in FEATURE_NAMES
    }
    buckets = []
    for feature in FEATURE_NAMES:
        grouped: dict[tuple[int, int], list[float]] = {}
        for condition, ratio in relative_losses[feature].items():
            key = (condition.heterogeneity, round_bucket(condition.round_index, cfg.rounds))
            grouped.setdefault(key, []).append(ratio)
        for (het, bucket), ratios in sorted(grouped.items()):
            buckets.append(
                BucketRow(het, bucket, feature, float(np.mean(ratios)), len(ratios))
            )
    return StudyReport(
        config=cfg,
        fit=fit,
        relative_losses=relative_losses,
        buckets=buckets,
        samples=len(samples),
        dropped_pairs=expected - len(samples),
    )
