"""Closed-form mathematics of the infinite binary-tree mixture.

Every cell of the unit interval is, with probability ``1 - split_prior``,
uniform all the way down, or it is split at its midpoint with a uniform
prior on the left/right mass and the same mixture placed on both halves.
Evidences are kept in the per-cell rescaled convention in which a uniform
cell has likelihood exactly one, and always as logarithms.

The recursive driver :func:`evaluate` walks the data down to the level at
which every cell holds at most one point and closes the infinite recursion
there analytically.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.special import expit, gammaln

__all__ = [
    "DimensionDistribution",
    "DuplicateDataError",
    "ModelConfig",
    "NodeSummary",
    "QueryPosition",
    "SplitCounts",
    "combine",
    "combine_arrays",
    "evaluate",
    "leaf_summary",
    "log_factorial",
    "log_weight",
    "log_weight_array",
    "prior_dim_coeffs",
]

LN2 = math.log(2.0)
DUPLICATE_POLICIES = ("truncate", "error")


class DuplicateDataError(ValueError):
    """Raised when data points cannot be told apart within ``max_depth`` levels."""


@dataclass(frozen=True)
class ModelConfig:
    """Hyper-parameters and numerical knobs of the tree mixture.

    ``split_prior`` is the prior probability that a cell is split rather
    than uniform. Values above one half are rejected: the prior over the
    number of split components would then put positive mass on infinite
    trees.
    """

    split_prior: float = 0.5
    dim_trunc: int = 16
    max_depth: int = 52
    overflow_threshold: float = 100.0
    duplicate_policy: str = "truncate"

    def __post_init__(self):
        if not 0.0 < self.split_prior <= 0.5:
            raise ValueError(f"split_prior must lie in (0, 1/2], got {self.split_prior!r}")
        if int(self.dim_trunc) != self.dim_trunc or self.dim_trunc < 1:
            raise ValueError(f"dim_trunc must be a positive integer, got {self.dim_trunc!r}")
        if int(self.max_depth) != self.max_depth or self.max_depth < 1:
            raise ValueError(f"max_depth must be a positive integer, got {self.max_depth!r}")
        if not self.overflow_threshold > 0:
            raise ValueError("overflow_threshold must be positive")
        if self.duplicate_policy not in DUPLICATE_POLICIES:
            raise ValueError(
                f"duplicate_policy must be one of {DUPLICATE_POLICIES}, got {self.duplicate_policy!r}"
            )

    # Derived constants, recomputed cheaply; kept off the dataclass fields so
    # configs stay hashable and comparable by their user-facing values.
    @property
    def log_split(self) -> float:
        return math.log(self.split_prior)

    @property
    def log_uniform(self) -> float:
        return math.log1p(-self.split_prior)

    @property
    def log_odds(self) -> float:
        return self.log_split - self.log_uniform

    @property
    def leaf_height(self) -> float:
        """Expected height below an empty or singleton cell: fixed point of h = b(1 + h)."""
        return self.split_prior / (1.0 - self.split_prior)


DEFAULT_CONFIG = ModelConfig()


@dataclass(frozen=True)
class SplitCounts:
    n_left: int
    n_right: int

    def __post_init__(self):
        if self.n_left < 0 or self.n_right < 0:
            raise ValueError("counts must be nonnegative")

    @property
    def n(self) -> int:
        return self.n_left + self.n_right

    @property
    def balance(self) -> float:
        """``n_left / n - 1/2``; undefined (raises) for an empty cell."""
        if self.n == 0:
            raise ZeroDivisionError("balance is undefined for an empty cell")
        return self.n_left / self.n - 0.5


@dataclass(frozen=True)
class DimensionDistribution:
    """Posterior over the number of split components, truncated at ``len(probs)``."""

    probs: np.ndarray
    tail_mass: float

    @classmethod
    def from_probs(cls, probs) -> "DimensionDistribution":
        probs = np.asarray(probs, dtype=float)
        return cls(probs, max(0.0, 1.0 - float(probs.sum())))

    def __len__(self):
        return len(self.probs)

    def mean(self) -> float:
        """Expected dimension, counting the tail mass at the truncation index.

        This is a lower bound whenever ``tail_mass > 0``.
        """
        k = np.arange(len(self.probs))
        return float(np.dot(k, self.probs) + len(self.probs) * self.tail_mass)


@dataclass(frozen=True)
class NodeSummary:
    log_evidence: float
    split_posterior: float
    height_at_query: float
    avg_height: float
    dims: DimensionDistribution
    node_count: int

    @property
    def evidence(self) -> float:
        return math.exp(self.log_evidence)


class QueryStatus(enum.Enum):
    INSIDE = "inside"
    OUTSIDE = "outside"
    ABSENT = "absent"


@dataclass(frozen=True)
class QueryPosition:
    """Where the height query sits relative to the current cell.

    ``residual`` is the query coordinate rescaled to the cell, in [0, 1).
    """

    status: QueryStatus
    residual: float | None = None

    def __post_init__(self):
        if (self.status is QueryStatus.INSIDE) != (self.residual is not None):
            raise ValueError("residual is defined exactly when the query is inside")
        if self.residual is not None and not 0.0 <= self.residual < 1.0:
            raise ValueError(f"residual must lie in [0, 1), got {self.residual!r}")

    @classmethod
    def inside(cls, residual: float) -> "QueryPosition":
        return cls(QueryStatus.INSIDE, float(residual))

    @classmethod
    def outside(cls) -> "QueryPosition":
        return _OUTSIDE

    @classmethod
    def absent(cls) -> "QueryPosition":
        return _ABSENT

    @classmethod
    def coerce(cls, x) -> "QueryPosition":
        """Accept a QueryPosition, ``None`` (absent) or a raw coordinate."""
        if isinstance(x, QueryPosition):
            return x
        if x is None:
            return _ABSENT
        x = float(x)
        return cls.inside(x) if 0.0 <= x < 1.0 else _OUTSIDE

    @property
    def is_inside(self) -> bool:
        return self.status is QueryStatus.INSIDE

    def children(self) -> tuple["QueryPosition", "QueryPosition"]:
        """Positions relative to the left and right half of the cell."""
        if not self.is_inside:
            return self, self
        r = self.residual
        if r < 0.5:
            return QueryPosition.inside(2.0 * r), _OUTSIDE
        return _OUTSIDE, QueryPosition.inside(2.0 * r - 1.0)


_OUTSIDE = QueryPosition(QueryStatus.OUTSIDE)
_ABSENT = QueryPosition(QueryStatus.ABSENT)


# ---------------------------------------------------------------------------
# prior coefficients and weights


def prior_dim_coeffs(N: int, split_prior=0.5) -> list:
    """Prior probabilities ``a_0 .. a_{N-1}`` of the effective dimension.

    Solves ``a_0 = 1 - b``, ``a_{k+1} = b * sum_i a_i a_{k-i}``. The
    arithmetic follows the type of ``split_prior``, so passing a
    :class:`fractions.Fraction` gives exact rationals.
    """
    if int(N) != N or N < 1:
        raise ValueError(f"N must be a positive integer, got {N!r}")
    if not 0 < split_prior <= Fraction(1, 2):
        raise ValueError(f"split_prior must lie in (0, 1/2], got {split_prior!r}")
    a = [1 - split_prior]
    for k in range(N - 1):
        a.append(split_prior * sum(a[i] * a[k - i] for i in range(k + 1)))
    return a


_LOG_FACT_TABLE = gammaln(np.arange(4097, dtype=float) + 1.0)
_LOG_FACT_LIST = _LOG_FACT_TABLE.tolist()


def log_factorial(n: int) -> float:
    """``ln n!``; table lookup for small n, log-gamma beyond."""
    if n < len(_LOG_FACT_LIST):
        return _LOG_FACT_LIST[n]
    return float(gammaln(float(n) + 1.0))


def log_weight(n_left: int, n_right: int) -> float:
    """``ln w = -n ln 2 + ln (n+1)! - ln n_left! - ln n_right!``."""
    n = n_left + n_right
    return -n * LN2 + log_factorial(n + 1) - log_factorial(n_left) - log_factorial(n_right)


def log_weight_array(n_left: np.ndarray, n_right: np.ndarray) -> np.ndarray:
    n_left = np.asarray(n_left, dtype=np.int64)
    n_right = np.asarray(n_right, dtype=np.int64)
    n = n_left + n_right
    # Same values and operation order as the scalar path, so both agree bitwise.
    return (
        -n.astype(float) * LN2
        + gammaln(n + 1.0 + 1.0)
        - gammaln(n_left + 1.0)
        - gammaln(n_right + 1.0)
    )


# ---------------------------------------------------------------------------
# leaves


@lru_cache(maxsize=64)
def _prior_probs(config: ModelConfig) -> np.ndarray:
    probs = np.array(prior_dim_coeffs(config.dim_trunc, config.split_prior), dtype=float)
    probs.setflags(write=False)
    return probs


@lru_cache(maxsize=64)
def _point_mass(config: ModelConfig) -> np.ndarray:
    probs = np.zeros(config.dim_trunc)
    probs[0] = 1.0
    probs.setflags(write=False)
    return probs


@lru_cache(maxsize=64)
def _closed_leaf(config: ModelConfig, inside: bool) -> NodeSummary:
    return NodeSummary(
        log_evidence=0.0,
        split_posterior=config.split_prior,
        height_at_query=config.leaf_height if inside else 0.0,
        avg_height=config.leaf_height,
        dims=DimensionDistribution.from_probs(_prior_probs(config)),
        node_count=1,
    )


@lru_cache(maxsize=64)
def _truncated_leaf(config: ModelConfig) -> NodeSummary:
    return NodeSummary(0.0, 0.0, 0.0, 0.0, DimensionDistribution(_point_mass(config), 0.0), 1)


def leaf_summary(n: int, query=None, config: ModelConfig = DEFAULT_CONFIG) -> NodeSummary:
    """Closed form for a cell holding zero or one data point.

    With one point and an inside query the caller guarantees the query sits
    on the datum; otherwise the recursion has to continue.
    """
    if n not in (0, 1):
        raise ValueError(f"closed-form leaves hold at most one point, got n={n}")
    return _closed_leaf(config, QueryPosition.coerce(query).is_inside)


# ---------------------------------------------------------------------------
# the combination step


_G_MAX = float(np.nextafter(1.0, 0.0))


def _mix(t: np.ndarray, config: ModelConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Log evidence, split posterior and its complement from ``t = ln(p0 p1 / w)``."""
    s = t + config.log_odds
    big = s >= config.overflow_threshold
    small = config.log_uniform + np.log1p(np.exp(np.minimum(s, config.overflow_threshold)))
    log_ev = np.where(big, t + config.log_split, small)
    # expit rounds to 1 for s > ~37; keep g strictly below 1, the complement stays exact
    return log_ev, np.minimum(expit(s), _G_MAX), expit(-s)


def combine_arrays(lp0, lp1, n0, n1, h0, h1, hb0, hb1, d0, d1, config: ModelConfig):
    """Vectorised combination of many sibling pairs at once.

    ``d0``/``d1`` have shape ``(M, N)``; everything else shape ``(M,)``.
    Returns ``(log_evidence, g, height, avg_height, probs, tail)`` where
    ``height`` assumes the query is inside the parent cell.
    """
    n0 = np.asarray(n0, dtype=np.int64)
    n1 = np.asarray(n1, dtype=np.int64)
    t = lp0 + lp1 - log_weight_array(n0, n1)
    log_ev, g, not_g = _mix(t, config)

    n2 = (n0 + n1 + 2).astype(float)
    height = g * (1.0 + h0 + h1)
    avg = g * (1.0 + ((n0 + 1) / n2) * hb0 + ((n1 + 1) / n2) * hb1)

    N = d0.shape[1]
    probs = np.zeros_like(d0)
    probs[:, 0] = not_g
    for i in range(N - 1):
        probs[:, i + 1:] += d0[:, i:i + 1] * d1[:, :N - 1 - i]
    probs[:, 1:] *= g[:, None]
    tail = np.maximum(1.0 - probs.sum(axis=1), 0.0)
    return log_ev, g, height, avg, probs, tail


def combine(left: NodeSummary, right: NodeSummary, counts: SplitCounts, query=None,
            config: ModelConfig = DEFAULT_CONFIG) -> NodeSummary:
    """Summary of a split cell from the summaries of its two halves."""
    one = lambda v: np.array([v], dtype=float)  # noqa: E731
    log_ev, g, height, avg, probs, tail = combine_arrays(
        one(left.log_evidence), one(right.log_evidence),
        np.array([counts.n_left]), np.array([counts.n_right]),
        one(left.height_at_query), one(right.height_at_query),
        one(left.avg_height), one(right.avg_height),
        left.dims.probs[None, :], right.dims.probs[None, :],
        config,
    )
    inside = QueryPosition.coerce(query).is_inside
    return NodeSummary(
        log_evidence=float(log_ev[0]),
        split_posterior=float(g[0]),
        height_at_query=float(height[0]) if inside else 0.0,
        avg_height=float(avg[0]),
        dims=DimensionDistribution(probs[0], float(tail[0])),
        node_count=1 + left.node_count + right.node_count,
    )


# ---------------------------------------------------------------------------
# recursive driver


def check_data(data, *, require_sorted: bool = True) -> np.ndarray:
    """Validate a data sequence on [0, 1) and return it as a float array."""
    xs = np.asarray(data, dtype=float).reshape(-1)
    if xs.size and not (np.all(xs >= 0.0) and np.all(xs < 1.0)):
        bad = xs[~((xs >= 0.0) & (xs < 1.0))][0]
        raise ValueError(f"data must lie in [0, 1), got {bad!r}")
    if require_sorted and xs.size > 1 and np.any(np.diff(xs) < 0):
        raise ValueError("data must be sorted ascending")
    return xs


def evaluate(data: Sequence[float], query=None, config: ModelConfig = DEFAULT_CONFIG, *,
             min_depth: int = 0, extra_depth: int = 0) -> NodeSummary:
    """Evidence, heights and dimension posterior of sorted data on [0, 1).

    ``query`` is a coordinate (or :class:`QueryPosition`) at which the
    expected tree height is reported. Two knobs defer the closed forms, for
    checking only; results are independent of both. ``min_depth`` recurses
    explicitly down to that absolute depth everywhere; ``extra_depth`` adds
    that many explicit levels below every cell where the closed form would
    first apply.
    """
    xs = check_data(data)
    min_depth = min(int(min_depth), config.max_depth)
    return _evaluate(xs, QueryPosition.coerce(query), 0, config, min_depth, int(extra_depth))


def _evaluate(xs: np.ndarray, q: QueryPosition, depth: int, config: ModelConfig,
              min_depth: int, extra: int = 0) -> NodeSummary:
    n = len(xs)
    if depth >= min_depth and n <= 1 and (n == 0 or not q.is_inside or q.residual == xs[0]):
        if extra <= 0 or depth >= config.max_depth:
            return _closed_leaf(config, q.is_inside)
        extra -= 1
        return _split(xs, q, depth, config, min_depth, extra)
    if depth >= config.max_depth:
        if n <= 1:
            # the query coincides with the datum at this resolution
            return _closed_leaf(config, q.is_inside)
        if config.duplicate_policy == "error":
            raise DuplicateDataError(
                f"{n} data points are indistinguishable at depth {config.max_depth}"
            )
        return _truncated_leaf(config)

    return _split(xs, q, depth, config, min_depth, extra)


def _split(xs, q, depth, config, min_depth, extra):
    n = len(xs)
    k = int(np.searchsorted(xs, 0.5, side="left"))
    q0, q1 = q.children()
    left = _evaluate(2.0 * xs[:k], q0, depth + 1, config, min_depth, extra)
    right = _evaluate(2.0 * xs[k:] - 1.0, q1, depth + 1, config, min_depth, extra)
    return combine(left, right, SplitCounts(k, n - k), q, config)
