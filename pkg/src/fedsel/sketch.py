"""Gradient summaries for the two-phase selection protocol.

``exact`` mode transmits the (selection-layer) gradient as-is; the
``sign_projection`` mode compresses each segment with a shared Rademacher
random projection scaled by 1/sqrt(sketch_dim), which preserves squared L2
norms in expectation. Projection matrices are regenerated from
(seed, round, segment) on both ends, so they cost zero bytes on the wire and
are identical across clients, making summaries directly comparable.

Similarity estimates for p = 4 on linear sketches are a heuristic (random
projections preserve L2 geometry); exact mode should be used where L4
fidelity matters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ComparabilityError, ConfigError
from .numerics import GradientVector, multilayer_power_cosine
from .seeds import stream

SKETCH_MODES = ("exact", "sign_projection")
BYTES_PER_ENTRY = 8  # double-precision accounting
MIN_SKETCH_DIM = 8
WHOLE_VECTOR_SEGMENT = "all"


@dataclass(frozen=True)
class SketchConfig:
    mode: str = "exact"
    sketch_dim: int | None = None
    seed: int = 0
    per_segment: bool = True

    def __post_init__(self):
        if self.mode not in SKETCH_MODES:
            raise ConfigError(f"unknown sketch mode {self.mode!r}; expected {SKETCH_MODES}")
        if self.mode == "sign_projection":
            if self.sketch_dim is None or self.sketch_dim < MIN_SKETCH_DIM:
                raise ConfigError(f"sign_projection needs sketch_dim >= {MIN_SKETCH_DIM}")
        elif self.sketch_dim is not None:
            raise ConfigError("exact mode takes no sketch_dim")


@dataclass(frozen=True, eq=False)
class GradientSummary:
    client_id: int
    round_index: int
    segments: tuple[tuple[str, np.ndarray], ...]
    byte_cost: int
    mode: str
    sketch_seed: int | None

    def as_gradient_vector(self) -> GradientVector:
        return GradientVector(self.segments)

    @property
    def segment_ids(self) -> tuple[str, ...]:
        return tuple(sid for sid, _ in self.segments)


def rademacher_matrix(rows: int, cols: int, seed: int, round_index: int, segment_id: str) -> np.ndarray:
    """Shared +-1 projection matrix for (seed, round, segment)."""
    rng = stream(seed, "sketch", round_index, segment_id)
    return rng.integers(0, 2, size=(rows, cols)).astype(np.float64) * 2.0 - 1.0


def sketch(g: GradientVector, cfg: SketchConfig, client_id: int, round_index: int) -> GradientSummary:
    """Summarize a gradient for transmission in the summary phase."""
    if cfg.mode == "exact":
        segments = g.segments
        sketch_seed = None
    else:
        p = cfg.sketch_dim
        scale = 1.0 / np.sqrt(p)
        sources = (
            g.segments if cfg.per_segment else ((WHOLE_VECTOR_SEGMENT, g.concat()),)
        )
        projected = []
        for sid, values in sources:
            if p > values.size:
                raise ConfigError(
                    f"sketch_dim {p} exceeds segment {sid!r} dimension {values.size}"
                )
            matrix = rademacher_matrix(p, values.size, cfg.seed, round_index, sid)
            projected.append((sid, scale * (matrix @ values)))
        segments = tuple(projected)
        sketch_seed = cfg.seed
    total_entries = sum(arr.size for _, arr in segments)
    return GradientSummary(
        client_id=client_id,
        round_index=round_index,
        segments=GradientVector(segments).segments,  # validated, frozen copies
        byte_cost=BYTES_PER_ENTRY * total_entries,
        mode=cfg.mode,
        sketch_seed=sketch_seed,
    )


def _check_comparable(a: GradientSummary, b: GradientSummary) -> None:
    if a.round_index != b.round_index:
        raise ComparabilityError(
            f"summaries from different rounds: {a.round_index} vs {b.round_index}"
        )
    if a.mode != b.mode or a.sketch_seed != b.sketch_seed:
        raise ComparabilityError("summaries sketched with different configs")
    if a.segment_ids != b.segment_ids or any(
        x.size != y.size for (_, x), (_, y) in zip(a.segments, b.segments)
    ):
        raise ComparabilityError(
            f"summary layouts differ: {a.segment_ids} vs {b.segment_ids}"
        )


def estimate_cos_p(
    a: GradientSummary,
    b: GradientSummary,
    p: float,
    variant: str = "powered",
    segment_weights=None,
) -> float:
    """Power cosine computed on the summaries (exact in exact mode)."""
    _check_comparable(a, b)
    return multilayer_power_cosine(
        a.as_gradient_vector(), b.as_gradient_vector(), p, variant, segment_weights
    )


def full_gradient_bytes(g: GradientVector) -> int:
    return BYTES_PER_ENTRY * g.total_dim
