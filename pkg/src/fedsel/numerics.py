"""Gradient vector math.

L_p norms, the polarization-style inner product they induce, the resulting
power cosine similarity (whole-vector and per-segment), and the coordinate
moments used as pairwise features.

Two inner-product variants are provided. ``literal`` is the plain
polarization (||u+v||_p - ||u-v||_p) / 4. ``powered`` (the default) is
(||u+v||_p^p - ||u-v||_p^p) / 2^p with matching ||.||_p^(p/2) normalization
in the cosine; it reduces to the Euclidean dot product / classical cosine at
p = 2 and satisfies cos(u, u) = 1 for every p, which ``literal`` does not.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    DegenerateGradientError,
    DegenerateStatisticError,
    DimensionError,
    LayoutError,
    NumericError,
)

VARIANTS = ("powered", "literal")
SUPPORTED_P = (1.0, 2.0, 4.0)


def _as_vector(v, name: str = "vector") -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionError(f"{name} must be a non-empty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite entries")
    return arr


def _check_pair(u, v) -> tuple[np.ndarray, np.ndarray]:
    a = _as_vector(u, "u")
    b = _as_vector(v, "v")
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    return a, b


def _check_p(p: float) -> float:
    if not np.isfinite(p) or p <= 0:
        raise ConfigError(f"p must be a positive real, got {p}")
    return float(p)


def _check_variant(variant: str) -> str:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return variant


def _abs_pow_sum(v: np.ndarray, p: float) -> float:
    """sum_i |v_i|^p, i.e. ||v||_p^p, avoiding pow() for p in {1, 2, 4}."""
    if p == 1.0:
        return float(np.sum(np.abs(v)))
    if p == 2.0:
        return float(np.sum(v * v))
    if p == 4.0:
        sq = v * v
        return float(np.sum(sq * sq))
    return float(np.sum(np.abs(v) ** p))


def lp_norm(v, p: float) -> float:
    """(sum_i |v_i|^p)^(1/p)."""
    arr = _as_vector(v)
    p = _check_p(p)
    total = _abs_pow_sum(arr, p)
    if p == 1.0:
        return total
    if p == 2.0:
        return float(np.sqrt(total))
    return float(total ** (1.0 / p))


def power_inner(u, v, p: float, variant: str = "powered") -> float:
    """Polarization inner product of u and v under the L_p norm.

    powered: (||u+v||_p^p - ||u-v||_p^p) / 2^p  (dot product at p = 2)
    literal: (||u+v||_p   - ||u-v||_p)   / 4
    """
    a, b = _check_pair(u, v)
    p = _check_p(p)
    _check_variant(variant)
    plus = a + b
    minus = a - b
    if variant == "powered":
        return (_abs_pow_sum(plus, p) - _abs_pow_sum(minus, p)) / 2.0**p
    return (lp_norm(plus, p) - lp_norm(minus, p)) / 4.0


def power_cosine(u, v, p: float, variant: str = "powered") -> float:
    """Cosine similarity induced by the L_p polarization inner product.

    The powered variant normalizes by ||u||_p^(p/2) ||v||_p^(p/2), so
    cos(u, u) = 1 and p = 2 recovers the classical cosine. The literal
    variant normalizes by ||u||_p ||v||_p. Values for p != 2 are used for
    ordering only and are not guaranteed to lie in [-1, 1].
    """
    a, b = _check_pair(u, v)
    p = _check_p(p)
    _check_variant(variant)
    pu = _abs_pow_sum(a, p)
    pv = _abs_pow_sum(b, p)
    if pu == 0.0 or pv == 0.0:
        raise DegenerateGradientError("power_cosine undefined for a zero-norm vector")
    inner = power_inner(a, b, p, variant)
    if variant == "powered":
        return inner / float(np.sqrt(pu) * np.sqrt(pv))
    return inner / (pu ** (1.0 / p) * pv ** (1.0 / p))


@dataclass(frozen=True, eq=False)
class GradientVector:
    """A flat gradient split into named, ordered segments (one per layer).

    Values are copied, validated finite, and frozen at construction, so
    instances are safe to share across threads.
    """

    segments: tuple[tuple[str, np.ndarray], ...]

    def __post_init__(self):
        cleaned = []
        seen: set[str] = set()
        for sid, values in self.segments:
            sid = str(sid)
            arr = np.array(values, dtype=np.float64)
            if arr.ndim != 1 or arr.size == 0:
                raise DimensionError(f"segment {sid!r} must be a non-empty 1-D vector")
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"segment {sid!r} contains non-finite entries")
            if sid in seen:
                raise LayoutError(f"duplicate segment id {sid!r}")
            seen.add(sid)
            arr.setflags(write=False)
            cleaned.append((sid, arr))
        if not cleaned:
            raise LayoutError("gradient vector needs at least one segment")
        object.__setattr__(self, "segments", tuple(cleaned))

    @property
    def total_dim(self) -> int:
        return sum(arr.size for _, arr in self.segments)

    @property
    def segment_ids(self) -> tuple[str, ...]:
        return tuple(sid for sid, _ in self.segments)

    def segment(self, segment_id: str) -> np.ndarray:
        for sid, arr in self.segments:
            if sid == segment_id:
                return arr
        raise LayoutError(f"unknown segment id {segment_id!r}")

    def concat(self) -> np.ndarray:
        return np.concatenate([arr for _, arr in self.segments])

    def restrict(self, segment_ids) -> "GradientVector":
        """Sub-vector containing only the named segments, in the given order."""
        return GradientVector(tuple((sid, self.segment(sid)) for sid in segment_ids))

    def same_layout(self, other: "GradientVector") -> bool:
        return self.segment_ids == other.segment_ids and all(
            a.size == b.size for (_, a), (_, b) in zip(self.segments, other.segments)
        )

    @classmethod
    def mean(cls, vectors) -> "GradientVector":
        """Coordinate-wise mean of same-layout gradients, in fixed input order."""
        vectors = list(vectors)
        if not vectors:
            raise DimensionError("cannot average zero gradients")
        head = vectors[0]
        for other in vectors[1:]:
            if not head.same_layout(other):
                raise LayoutError("cannot average gradients with different layouts")
        scale = 1.0 / len(vectors)
        return cls(
            tuple(
                (sid, scale * np.sum([v.segments[i][1] for v in vectors], axis=0))
                for i, (sid, _) in enumerate(head.segments)
            )
        )


def multilayer_power_cosine(
    a: GradientVector,
    b: GradientVector,
    p: float,
    variant: str = "powered",
    segment_weights=None,
) -> float:
    """Weighted sum of per-segment power cosines; weights default uniform."""
    if not a.same_layout(b):
        raise LayoutError(
            f"segment layouts differ: {a.segment_ids} vs {b.segment_ids}"
        )
    n_seg = len(a.segments)
    if segment_weights is None:
        weights = np.full(n_seg, 1.0 / n_seg)
    else:
        weights = np.asarray(segment_weights, dtype=np.float64)
        if weights.shape != (n_seg,):
            raise ConfigError(f"expected {n_seg} segment weights, got shape {weights.shape}")
        if np.any(weights < 0) or abs(float(weights.sum()) - 1.0) > 1e-9:
            raise ConfigError("segment weights must be non-negative and sum to 1")
    total = 0.0
    for w, (_, seg_a), (_, seg_b) in zip(weights, a.segments, b.segments):
        if w == 0.0:
            continue
        total += w * power_cosine(seg_a, seg_b, p, variant)
    return total


def kurtosis(v) -> float:
    """Raw fourth standardized moment m4 / m2^2 over coordinates (population)."""
    arr = _as_vector(v)
    if arr.size < 2:
        raise DimensionError("kurtosis needs at least 2 coordinates")
    centered = arr - arr.mean()
    m2 = float(np.mean(centered**2))
    if m2 == 0.0:
        raise DegenerateStatisticError("kurtosis undefined for zero-variance vector")
    m4 = float(np.mean(centered**4))
    return m4 / (m2 * m2)


def covariance(u, v) -> float:
    """Population covariance of the coordinate pairs."""
    a, b = _check_pair(u, v)
    if a.size < 2:
        raise DimensionError("covariance needs at least 2 coordinates")
    return float(np.mean((a - a.mean()) * (b - b.mean())))


def pearson(u, v) -> float:
    """Pearson correlation of the coordinate pairs."""
    a, b = _check_pair(u, v)
    if a.size < 2:
        raise DimensionError("pearson needs at least 2 coordinates")
    var_a = float(np.mean((a - a.mean()) ** 2))
    var_b = float(np.mean((b - b.mean()) ** 2))
    if var_a == 0.0 or var_b == 0.0:
        raise DegenerateStatisticError("pearson undefined for zero-variance vector")
    return covariance(a, b) / float(np.sqrt(var_a) * np.sqrt(var_b))
