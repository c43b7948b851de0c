"""Round orchestration for the two-phase selection protocol.

Each round: every client computes its full-batch local gradient; every client
transmits a summary; the policy picks the active subset; only the selected
clients transmit full gradients; the server averages them uniformly, steps
the model, and records metrics. Transmissions are appended to a transcript so
tests can assert that no unselected client's full gradient ever crosses the
wire, and so byte accounting is exact.

When regret tracking is on, the oracle re-evaluates every subset of the same
size on the validation split and the round's regret is the validation-loss
gap between the chosen subset and the best one.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import model as model_mod
from . import selection as selection_mod
from .data import ClientDataset, LabeledDataset, PartitionSpec, generate_synthetic, load_csv, partition
from .errors import ConfigError, NumericDivergenceError
from .numerics import GradientVector
from .sketch import SketchConfig, full_gradient_bytes, sketch

log = logging.getLogger("fedsel.federation")

POLICY_NAMES = ("pncs", "random", "top_loss", "loss_softmax", "full", "oracle")


@dataclass(frozen=True)
class EtaSchedule:
    """Constant learning rate, or step decay (value * decay^((t-1) // every))."""

    kind: str = "constant"
    value: float = 0.1
    decay: float = 0.5
    every: int = 10

    def __post_init__(self):
        if self.kind not in ("constant", "step"):
            raise ConfigError(f"unknown eta schedule {self.kind!r}")
        if self.value <= 0:
            raise ConfigError(f"learning rate must be > 0, got {self.value}")
        if self.kind == "step" and (not 0 < self.decay <= 1 or self.every < 1):
            raise ConfigError("step schedule needs 0 < decay <= 1 and every >= 1")

    def at(self, round_index: int) -> float:
        if self.kind == "constant":
            return self.value
        return self.value * self.decay ** ((round_index - 1) // self.every)


@dataclass(frozen=True)
class PolicySpec:
    name: str
    p: float = 4.0
    variant: str = "powered"
    queue_len: int = 0
    subset_budget: int = selection_mod.DEFAULT_SUBSET_BUDGET
    candidate_frac: float = 1.0
    temperature: float = 1.0

    def __post_init__(self):
        if self.name not in POLICY_NAMES:
            raise ConfigError(f"unknown policy {self.name!r}; expected one of {POLICY_NAMES}")
        if self.name == "pncs":
            if self.p not in (1, 2, 4):
                raise ConfigError(f"policy p must be in {{1, 2, 4}}, got {self.p}")
            if self.variant not in ("powered", "literal"):
                raise ConfigError(f"unknown variant {self.variant!r}")
            if self.queue_len < 0:
                raise ConfigError("queue_len must be >= 0")


@dataclass(frozen=True)
class DataSpec:
    source: str = "synthetic"
    classes: int = 10
    dim: int = 64
    per_class: int = 200
    spread: float = 0.8
    path: str | None = None

    def __post_init__(self):
        if self.source not in ("synthetic", "csv"):
            raise ConfigError(f"unknown data source {self.source!r}")
        if self.source == "csv" and not self.path:
            raise ConfigError("csv data source needs a path")

    def load(self, seed: int) -> LabeledDataset:
        if self.source == "synthetic":
            return generate_synthetic(self.classes, self.dim, self.per_class, self.spread, seed)
        return load_csv(self.path)


@dataclass(frozen=True)
class ModelSpec:
    arch: str = "linear"
    hidden: int | None = None

    def __post_init__(self):
        if self.arch not in model_mod.ARCH_KINDS:
            raise ConfigError(f"unknown model arch {self.arch!r}")
        if self.arch == "mlp" and (self.hidden is None or self.hidden < 1):
            raise ConfigError("mlp model needs hidden >= 1")

    def architecture(self, d_in: int, classes: int) -> model_mod.Architecture:
        return model_mod.Architecture(self.arch, d_in, classes, self.hidden)


@dataclass(frozen=True)
class ExperimentConfig:
    num_clients: int = 10
    rounds: int = 20
    clients_per_round: int = 2
    eta: EtaSchedule = field(default_factory=EtaSchedule)
    policy: PolicySpec = field(default_factory=lambda: PolicySpec("random"))
    sketch: SketchConfig = field(default_factory=SketchConfig)
    partition_mode: str = "shard"
    shards_per_client: int | None = 1
    alpha: float | None = None
    data: DataSpec = field(default_factory=DataSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    seeds: tuple[int, ...] = (0,)
    selection_layers: tuple[str, ...] | None = None
    track_regret: bool = False
    oracle_budget: int = selection_mod.DEFAULT_ORACLE_BUDGET

    def __post_init__(self):
        if not 2 <= self.clients_per_round <= self.num_clients:
            raise ConfigError(
                f"need 2 <= clients_per_round <= num_clients, got "
                f"{self.clients_per_round} and {self.num_clients}"
            )
        if self.rounds < 1:
            raise ConfigError(f"rounds must be >= 1, got {self.rounds}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.selection_layers is not None and not self.selection_layers:
            raise ConfigError("selection_layers must be non-empty or null")
        # construct once to surface validation errors early
        self.partition_spec(seed=0)

    def partition_spec(self, seed: int) -> PartitionSpec:
        return PartitionSpec(
            num_clients=self.num_clients,
            mode=self.partition_mode,
            shards_per_client=self.shards_per_client,
            alpha=self.alpha,
            seed=seed,
        )


@dataclass(frozen=True)
class TransmissionRecord:
    round_index: int
    phase: str  # "summary" | "full"
    client_id: int
    nbytes: int


@dataclass(frozen=True)
class RoundMetrics:
    round_index: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    test_loss: float
    test_accuracy: float
    selected: tuple[int, ...]
    subset_score: float | None
    regret: float | None
    bytes_summary: int
    bytes_full: int
    bytes_cumulative: int
    diagnostics: dict | None = None


@dataclass
class FederationState:
    seed: int
    round_index: int  # next round to run, 1-based
    params: model_mod.ModelParameters
    clients: list[ClientDataset]
    dataset: LabeledDataset
    queue: selection_mod.AoUQueue
    bytes_cumulative: int = 0
    transcript: list[TransmissionRecord] = field(default_factory=list)


def global_loss(params: model_mod.ModelParameters, clients: Sequence[ClientDataset]) -> float:
    """Data-size-weighted mean of local losses (= loss over the union)."""
    total = sum(c.train.size for c in clients)
    return sum(
        c.train.size * model_mod.loss(params, c.train) for c in clients
    ) / total


def init_state(cfg: ExperimentConfig, seed: int) -> FederationState:
    dataset = cfg.data.load(seed)
    clients = partition(dataset, cfg.partition_spec(seed))
    arch = cfg.model.architecture(dataset.dim, dataset.num_classes)
    if cfg.selection_layers is not None:
        unknown = set(cfg.selection_layers) - set(arch.segment_ids)
        if unknown:
            raise ConfigError(
                f"selection_layers {sorted(unknown)} not in model layers {arch.segment_ids}"
            )
    params = model_mod.init_params(arch, seed)
    return FederationState(
        seed=seed,
        round_index=1,
        params=params,
        clients=clients,
        dataset=dataset,
        queue=selection_mod.AoUQueue(cfg.policy.queue_len),
    )


def _decide(
    cfg: ExperimentConfig,
    state: FederationState,
    summaries: dict,
    gradients: list[GradientVector],
    eta: float,
    round_index: int,
) -> selection_mod.SelectionDecision:
    policy = cfg.policy
    if policy.name == "pncs":
        return selection_mod.select_pncs(
            summaries,
            cfg.clients_per_round,
            state.queue,
            p=policy.p,
            variant=policy.variant,
            subset_budget=policy.subset_budget,
        )
    if policy.name == "random":
        return selection_mod.select_random(
            cfg.num_clients, cfg.clients_per_round, state.seed, round_index
        )
    if policy.name in ("top_loss", "loss_softmax"):
        local_losses = [model_mod.loss(state.params, c.train) for c in state.clients]
        if policy.name == "top_loss":
            return selection_mod.select_top_loss(
                local_losses, cfg.clients_per_round, policy.candidate_frac, state.seed, round_index
            )
        return selection_mod.select_loss_softmax(
            local_losses, cfg.clients_per_round, policy.temperature, state.seed, round_index
        )
    if policy.name == "full":
        return selection_mod.SelectionDecision(round_index, tuple(range(cfg.num_clients)))
    return selection_mod.select_oracle(
        state.params,
        gradients,
        state.dataset.val,
        cfg.clients_per_round,
        eta,
        round_index,
        subset_budget=cfg.oracle_budget,
    )


def _diagnostics_json(decision: selection_mod.SelectionDecision, queue: selection_mod.AoUQueue) -> dict:
    diag = decision.diagnostics
    record: dict = {"queue": [list(entry) for entry in queue.snapshot()]}
    if diag is None:
        return record
    if diag.pairwise is not None:
        record["eligible"] = list(diag.eligible)
        record["pairwise"] = [[float(v) for v in row] for row in diag.pairwise]
    if diag.degenerate:
        record["degenerate"] = list(diag.degenerate)
    if diag.forced_evictions:
        record["forced_evictions"] = list(diag.forced_evictions)
    if diag.method:
        record["method"] = diag.method
    return record


def run_round(state: FederationState, cfg: ExperimentConfig) -> tuple[FederationState, RoundMetrics]:
    if state.round_index > cfg.rounds:
        raise ConfigError(f"round {state.round_index} past configured horizon {cfg.rounds}")
    t = state.round_index
    eta = cfg.eta.at(t)

    # 1. local full-batch gradients
    gradients = [model_mod.gradient(state.params, c.train) for c in state.clients]

    # 2. summary phase: every client transmits
    summaries = {}
    bytes_summary = 0
    for cid, g in enumerate(gradients):
        view = g if cfg.selection_layers is None else g.restrict(cfg.selection_layers)
        summary = sketch(view, cfg.sketch, cid, t)
        summaries[cid] = summary
        state.transcript.append(TransmissionRecord(t, "summary", cid, summary.byte_cost))
        bytes_summary += summary.byte_cost

    # 3. selection
    decision = _decide(cfg, state, summaries, gradients, eta, t)

    # 4. full-gradient phase: only selected clients transmit
    bytes_full = 0
    for cid in decision.selected:
        nbytes = full_gradient_bytes(gradients[cid])
        state.transcript.append(TransmissionRecord(t, "full", cid, nbytes))
        bytes_full += nbytes

    # 5-6. aggregate uniformly and step
    aggregated = GradientVector.mean([gradients[cid] for cid in decision.selected])
    if not np.all(np.isfinite(aggregated.concat())):
        raise NumericDivergenceError(f"aggregated gradient diverged at round {t}")
    new_params = model_mod.apply_update(state.params, aggregated, eta)

    # 7. metrics and optional regret
    regret = None
    if cfg.track_regret:
        if cfg.policy.name == "oracle":
            oracle_decision = decision
        else:
            oracle_decision = selection_mod.select_oracle(
                state.params,
                gradients,
                state.dataset.val,
                len(decision.selected),
                eta,
                t,
                subset_budget=cfg.oracle_budget,
            )
        table = oracle_decision.diagnostics.subset_losses
        regret = table[decision.selected] - min(table.values())

    score = decision.score
    if score is None and len(decision.selected) >= 2:
        score = selection_mod.subset_score(
            summaries, decision.selected, cfg.policy.p, cfg.policy.variant
        )

    bytes_cumulative = state.bytes_cumulative + bytes_summary + bytes_full
    metrics = RoundMetrics(
        round_index=t,
        train_loss=global_loss(new_params, state.clients),
        val_loss=model_mod.loss(new_params, state.dataset.val),
        val_accuracy=model_mod.accuracy(new_params, state.dataset.val),
        test_loss=model_mod.loss(new_params, state.dataset.test),
        test_accuracy=model_mod.accuracy(new_params, state.dataset.test),
        selected=decision.selected,
        subset_score=score,
        regret=regret,
        bytes_summary=bytes_summary,
        bytes_full=bytes_full,
        bytes_cumulative=bytes_cumulative,
        diagnostics=_diagnostics_json(decision, state.queue),
    )
    state.params = new_params
    state.round_index = t + 1
    state.bytes_cumulative = bytes_cumulative
    return state, metrics


@dataclass(frozen=True)
class AggregateRow:
    round_index: int
    train_loss_mean: float
    train_loss_std: float
    val_loss_mean: float
    val_loss_std: float
    val_accuracy_mean: float
    val_accuracy_std: float
    test_loss_mean: float
    test_loss_std: float
    test_accuracy_mean: float
    test_accuracy_std: float
    regret_mean: float | None
    regret_std: float | None


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    per_seed: dict[int, list[RoundMetrics]]
    aggregate: list[AggregateRow]


def _mean_std(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return mean, std


def aggregate_rounds(per_seed: dict[int, list[RoundMetrics]]) -> list[AggregateRow]:
    """Per-round mean and sample std across seeds."""
    rounds = len(next(iter(per_seed.values())))
    rows = []
    for t in range(rounds):
        row = [m[t] for m in per_seed.values()]
        stats = {}
        for name in ("train_loss", "val_loss", "val_accuracy", "test_loss", "test_accuracy"):
            mean, std = _mean_std([getattr(m, name) for m in row])
            stats[f"{name}_mean"] = mean
            stats[f"{name}_std"] = std
        regret_vals = [m.regret for m in row if m.regret is not None]
        regret_mean = regret_std = None
        if regret_vals and len(regret_vals) == len(row):
            regret_mean, regret_std = _mean_std(regret_vals)
        rows.append(
            AggregateRow(
                round_index=row[0].round_index,
                regret_mean=regret_mean,
                regret_std=regret_std,
                **stats,
            )
        )
    return rows


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run all configured seeds for the full horizon and aggregate."""
    per_seed: dict[int, list[RoundMetrics]] = {}
    for seed in cfg.seeds:
        log.info("running seed %d", seed)
        state = init_state(cfg, seed)
        history = []
        for _ in range(cfg.rounds):
            state, metrics = run_round(state, cfg)
            history.append(metrics)
        per_seed[seed] = history
    return ExperimentResult(cfg, per_seed, aggregate_rounds(per_seed))
