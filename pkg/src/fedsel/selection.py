"""Client-selection policies.

PNCS picks the subset with the lowest mean pairwise power cosine (gradient
diversity), subject to an age-of-update cooldown queue; baselines are uniform
random, top-local-loss, loss-softmax sampling, and full participation. The
exhaustive oracle evaluates every candidate subset's hypothetical update on
the held-out validation split and is both the regret reference and the study
label source.

All policies are deterministic given (inputs, seed, round) and return exactly
``clients_per_round`` distinct ids (full participation returns all). Ties
break toward lexicographically smaller subsets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np

from . import model
from .errors import ConfigError, DegenerateGradientError
from .numerics import GradientVector
from .seeds import stream
from .sketch import GradientSummary, estimate_cos_p

DEFAULT_SUBSET_BUDGET = 50_000
DEFAULT_ORACLE_BUDGET = 10_000


@dataclass
class AoUQueue:
    """Cooldown bookkeeping: a client selected at round t is ineligible at
    every round t' <= t + ceil(queue_len / clients_per_round)."""

    queue_len: int
    entries: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.queue_len < 0:
            raise ConfigError(f"queue length must be >= 0, got {self.queue_len}")

    def cooldown(self, clients_per_round: int) -> int:
        return math.ceil(self.queue_len / clients_per_round)

    def is_eligible(self, client_id: int, round_index: int, clients_per_round: int) -> bool:
        selected_at = self.entries.get(client_id)
        if selected_at is None:
            return True
        return round_index > selected_at + self.cooldown(clients_per_round)

    def eligible_clients(self, client_ids, round_index: int, clients_per_round: int) -> list[int]:
        return [
            k for k in sorted(client_ids) if self.is_eligible(k, round_index, clients_per_round)
        ]

    def evict_oldest_until(
        self, client_ids, round_index: int, clients_per_round: int, need: int
    ) -> list[int]:
        """Force-evict oldest entries until `need` clients are eligible."""
        evicted = []
        while (
            len(self.eligible_clients(client_ids, round_index, clients_per_round)) < need
            and self.entries
        ):
            victim = min(self.entries, key=lambda k: (self.entries[k], k))
            del self.entries[victim]
            evicted.append(victim)
        return evicted

    def record_selection(self, selected, round_index: int, clients_per_round: int) -> None:
        cooldown = self.cooldown(clients_per_round)
        expired = [k for k, t in self.entries.items() if t + cooldown <= round_index]
        for k in expired:
            del self.entries[k]
        for k in selected:
            self.entries[k] = round_index

    def snapshot(self) -> list[tuple[int, int]]:
        return sorted(self.entries.items())


@dataclass(frozen=True)
class SelectionDiagnostics:
    eligible: tuple[int, ...] = ()
    pairwise: np.ndarray | None = None
    degenerate: tuple[int, ...] = ()
    forced_evictions: tuple[int, ...] = ()
    method: str = ""
    subset_losses: dict[tuple[int, ...], float] | None = None
    subset_accuracies: dict[tuple[int, ...], float] | None = None


@dataclass(frozen=True)
class SelectionDecision:
    round_index: int
    selected: tuple[int, ...]
    score: float | None = None
    diagnostics: SelectionDiagnostics | None = None


def _degenerate_clients(
    summaries: Mapping[int, GradientSummary], segment_weights=None
) -> set[int]:
    """Clients with a zero-norm segment among the weighted ones (similarity
    against them is undefined)."""
    flagged = set()
    for cid, summary in summaries.items():
        for pos, (_, values) in enumerate(summary.segments):
            if segment_weights is not None and segment_weights[pos] == 0:
                continue
            if not np.any(values):
                flagged.add(cid)
                break
    return flagged


def pairwise_similarity(
    summaries: Mapping[int, GradientSummary],
    p: float = 4.0,
    variant: str = "powered",
    segment_weights=None,
    client_ids: Sequence[int] | None = None,
) -> tuple[list[int], np.ndarray, set[int]]:
    """Similarity matrix over the given clients (sorted ids).

    Pairs touching a degenerate (zero-norm) client contribute neutral 0 and
    the offenders are reported for diagnostics.
    """
    ids = sorted(summaries if client_ids is None else client_ids)
    degenerate = _degenerate_clients({k: summaries[k] for k in ids}, segment_weights)
    matrix = np.zeros((len(ids), len(ids)))
    for i, a in enumerate(ids):
        for j in range(i + 1, len(ids)):
            b = ids[j]
            if a in degenerate or b in degenerate:
                value = 0.0
            else:
                value = estimate_cos_p(summaries[a], summaries[b], p, variant, segment_weights)
            matrix[i, j] = matrix[j, i] = value
    return ids, matrix, degenerate


def subset_score(
    summaries: Mapping[int, GradientSummary],
    subset,
    p: float = 4.0,
    variant: str = "powered",
    segment_weights=None,
) -> float:
    """Mean pairwise power cosine over all unordered pairs of the subset."""
    members = sorted(subset)
    if len(members) < 2:
        raise ConfigError(f"subset score needs at least 2 clients, got {len(members)}")
    degenerate = _degenerate_clients({k: summaries[k] for k in members}, segment_weights)
    total = 0.0
    for a, b in combinations(members, 2):
        if a in degenerate or b in degenerate:
            continue
        total += estimate_cos_p(summaries[a], summaries[b], p, variant, segment_weights)
    return total / math.comb(len(members), 2)


def _mean_of_pairs(matrix: np.ndarray, positions: Sequence[int]) -> float:
    total = 0.0
    for i, a in enumerate(positions):
        for b in positions[i + 1 :]:
            total += matrix[a, b]
    return total / math.comb(len(positions), 2)


def _exhaustive_min(ids: list[int], matrix: np.ndarray, size: int):
    best_subset = None
    best_score = math.inf
    for subset in combinations(range(len(ids)), size):
        score = _mean_of_pairs(matrix, subset)
        if score < best_score:
            best_score = score
            best_subset = subset
    return tuple(ids[i] for i in best_subset), best_score


def _greedy_min(ids: list[int], matrix: np.ndarray, size: int):
    """Seed with the globally most-negative pair, then grow one client at a
    time, always minimizing the new subset mean."""
    n = len(ids)
    best_pair = None
    best_value = math.inf
    for i in range(n):
        for j in range(i + 1, n):
            if matrix[i, j] < best_value:
                best_value = matrix[i, j]
                best_pair = (i, j)
    chosen = list(best_pair)
    pair_sum = best_value
    while len(chosen) < size:
        best_add = None
        best_score = math.inf
        denom = math.comb(len(chosen) + 1, 2)
        for c in range(n):
            if c in chosen:
                continue
            candidate = (pair_sum + sum(matrix[s, c] for s in chosen)) / denom
            if candidate < best_score:
                best_score = candidate
                best_add = c
        pair_sum += sum(matrix[s, best_add] for s in chosen)
        chosen.append(best_add)
    positions = sorted(chosen)
    return tuple(ids[i] for i in positions), _mean_of_pairs(matrix, positions)


def select_pncs(
    summaries: Mapping[int, GradientSummary],
    clients_per_round: int,
    queue: AoUQueue,
    p: float = 4.0,
    variant: str = "powered",
    segment_weights=None,
    subset_budget: int = DEFAULT_SUBSET_BUDGET,
) -> SelectionDecision:
    """Diversity-first selection: minimize the mean pairwise power cosine
    over queue-eligible clients, then enqueue the chosen subset."""
    if clients_per_round < 2:
        raise ConfigError(f"need clients_per_round >= 2, got {clients_per_round}")
    if len(summaries) < clients_per_round:
        raise ConfigError(
            f"cannot select {clients_per_round} of {len(summaries)} clients"
        )
    rounds = {s.round_index for s in summaries.values()}
    if len(rounds) != 1:
        raise ConfigError(f"summaries span multiple rounds: {sorted(rounds)}")
    round_index = rounds.pop()

    all_ids = sorted(summaries)
    eligible = queue.eligible_clients(all_ids, round_index, clients_per_round)
    forced = ()
    if len(eligible) < clients_per_round:
        forced = tuple(
            queue.evict_oldest_until(all_ids, round_index, clients_per_round, clients_per_round)
        )
        eligible = queue.eligible_clients(all_ids, round_index, clients_per_round)

    ids, matrix, degenerate = pairwise_similarity(
        summaries, p, variant, segment_weights, client_ids=eligible
    )
    if math.comb(len(ids), clients_per_round) <= subset_budget:
        selected, score = _exhaustive_min(ids, matrix, clients_per_round)
        method = "exhaustive"
    else:
        selected, score = _greedy_min(ids, matrix, clients_per_round)
        method = "greedy"

    queue.record_selection(selected, round_index, clients_per_round)
    return SelectionDecision(
        round_index=round_index,
        selected=selected,
        score=score,
        diagnostics=SelectionDiagnostics(
            eligible=tuple(ids),
            pairwise=matrix,
            degenerate=tuple(sorted(degenerate)),
            forced_evictions=forced,
            method=method,
        ),
    )


def select_random(
    num_clients: int, clients_per_round: int, seed: int, round_index: int
) -> SelectionDecision:
    """Uniform without replacement; deterministic per (seed, round)."""
    if clients_per_round > num_clients:
        raise ConfigError(f"cannot select {clients_per_round} of {num_clients} clients")
    rng = stream(seed, "policy", "random", round_index)
    chosen = rng.choice(num_clients, size=clients_per_round, replace=False)
    return SelectionDecision(round_index, tuple(sorted(int(c) for c in chosen)))


def select_top_loss(
    local_losses: Sequence[float],
    clients_per_round: int,
    candidate_frac: float = 1.0,
    seed: int = 0,
    round_index: int = 1,
) -> SelectionDecision:
    """Highest-local-loss selection from a random candidate pool."""
    num_clients = len(local_losses)
    if clients_per_round > num_clients:
        raise ConfigError(f"cannot select {clients_per_round} of {num_clients} clients")
    if not 0 < candidate_frac <= 1:
        raise ConfigError(f"candidate_frac must be in (0, 1], got {candidate_frac}")
    pool_size = min(num_clients, max(clients_per_round, round(candidate_frac * num_clients)))
    rng = stream(seed, "policy", "top-loss", round_index)
    pool = rng.choice(num_clients, size=pool_size, replace=False)
    ranked = sorted(pool, key=lambda k: (-local_losses[k], k))
    return SelectionDecision(
        round_index, tuple(sorted(int(k) for k in ranked[:clients_per_round]))
    )


def select_loss_softmax(
    local_losses: Sequence[float],
    clients_per_round: int,
    temperature: float = 1.0,
    seed: int = 0,
    round_index: int = 1,
) -> SelectionDecision:
    """Sample without replacement with probabilities ~ exp(loss / temperature)."""
    num_clients = len(local_losses)
    if clients_per_round > num_clients:
        raise ConfigError(f"cannot select {clients_per_round} of {num_clients} clients")
    if temperature <= 0:
        raise ConfigError(f"temperature must be > 0, got {temperature}")
    losses = np.asarray(local_losses, dtype=np.float64)
    weights = np.exp((losses - losses.max()) / temperature)
    rng = stream(seed, "policy", "loss-softmax", round_index)
    remaining = list(range(num_clients))
    chosen = []
    for _ in range(clients_per_round):
        probs = weights[remaining] / weights[remaining].sum()
        pick = int(rng.choice(remaining, p=probs))
        remaining.remove(pick)
        chosen.append(pick)
    return SelectionDecision(round_index, tuple(sorted(chosen)))


def select_oracle(
    params: model.ModelParameters,
    gradients: Sequence[GradientVector],
    val_batch: model.Batch,
    clients_per_round: int,
    eta: float,
    round_index: int,
    subset_budget: int = DEFAULT_ORACLE_BUDGET,
) -> SelectionDecision:
    """Evaluate every subset's hypothetical averaged update on validation
    data; return the loss-minimizing subset plus the full lookup tables."""
    num_clients = len(gradients)
    if clients_per_round > num_clients:
        raise ConfigError(f"cannot select {clients_per_round} of {num_clients} clients")
    n_subsets = math.comb(num_clients, clients_per_round)
    if n_subsets > subset_budget:
        raise ConfigError(
            f"{n_subsets} subsets exceed the oracle budget of {subset_budget}"
        )
    losses: dict[tuple[int, ...], float] = {}
    accuracies: dict[tuple[int, ...], float] = {}
    best_subset = None
    best_loss = math.inf
    for subset in combinations(range(num_clients), clients_per_round):
        averaged = GradientVector.mean([gradients[k] for k in subset])
        candidate = model.apply_update(params, averaged, eta)
        val_loss = model.loss(candidate, val_batch)
        losses[subset] = val_loss
        accuracies[subset] = model.accuracy(candidate, val_batch)
        if val_loss < best_loss:
            best_loss = val_loss
            best_subset = subset
    return SelectionDecision(
        round_index=round_index,
        selected=best_subset,
        score=None,
        diagnostics=SelectionDiagnostics(
            method="oracle", subset_losses=losses, subset_accuracies=accuracies
        ),
    )
