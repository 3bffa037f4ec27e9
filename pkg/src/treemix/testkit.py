"""Ground truth for the tree mixture, independent of the fast recursion.

* :func:`oracle_evidence` sums the evidence over every tree skeleton of a
  finite depth, one explicit term per skeleton.
* :func:`finite_depth_evaluate` is the plain recursion cut off at a fixed
  depth, with no closed-form shortcuts.
* A few reference densities with exact inverse CDFs drive the consistency
  experiment.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, stats

from .core import (
    DEFAULT_CONFIG,
    DimensionDistribution,
    ModelConfig,
    NodeSummary,
    QueryPosition,
    SplitCounts,
    combine,
)
from .tree import build, height_at, predictive_density

__all__ = [
    "DISTRIBUTIONS",
    "ExperimentReport",
    "ExperimentRow",
    "TestDistribution",
    "consistency_experiment",
    "exact_finite_evidence",
    "finite_depth_evaluate",
    "get_distribution",
    "oracle_evidence",
    "skeletons",
    "sample_test_distribution",
]

MAX_ORACLE_DEPTH = 4


# ---------------------------------------------------------------------------
# skeleton enumeration


@functools.lru_cache(maxsize=None)
def skeletons(depth: int) -> tuple:
    """All decision trees of the given height.

    ``None`` is a uniform cell, a pair ``(left, right)`` a split. Cells at
    the bottom are forced to be uniform.
    """
    if depth == 0:
        return (None,)
    below = skeletons(depth - 1)
    return (None,) + tuple((l, r) for l in below for r in below)


def _exact_weight(n0: int, n1: int) -> Fraction:
    n = n0 + n1
    return Fraction(math.factorial(n + 1), math.factorial(n0) * math.factorial(n1) * 2 ** n)


def _counts(points: Sequence[Fraction]) -> tuple[list[Fraction], list[Fraction]]:
    left = [2 * p for p in points if p < Fraction(1, 2)]
    right = [2 * p - 1 for p in points if p >= Fraction(1, 2)]
    return left, right


def _skeleton_term(skel, cell: tuple[int, int], m: int, beta: Fraction, cells, memo: dict):
    """(prior probability, integrated likelihood) of one skeleton below ``cell``.

    Sub-skeletons are shared between skeletons, so their terms are cached
    per (sub-skeleton, cell).
    """
    depth, index = cell
    if depth == m:
        return Fraction(1), Fraction(1)
    if skel is None:
        return 1 - beta, Fraction(1)
    key = (id(skel), cell)
    if key not in memo:
        left, right = (depth + 1, 2 * index), (depth + 1, 2 * index + 1)
        p0, l0 = _skeleton_term(skel[0], left, m, beta, cells, memo)
        p1, l1 = _skeleton_term(skel[1], right, m, beta, cells, memo)
        w = _exact_weight(len(cells(left)), len(cells(right)))
        memo[key] = beta * p0 * p1, l0 * l1 / w
    return memo[key]


def oracle_evidence(data: Sequence[float], m: int, config: ModelConfig = DEFAULT_CONFIG) -> Fraction:
    """Evidence at tree height ``m`` by brute force over all skeletons (exact rational)."""
    if not 0 <= m <= MAX_ORACLE_DEPTH:
        raise ValueError(f"oracle depth must be in 0..{MAX_ORACLE_DEPTH}, got {m}")
    beta = Fraction(config.split_prior)
    points = [Fraction(float(x)) for x in data]

    @functools.lru_cache(maxsize=None)
    def cells(cell):
        depth, index = cell
        if depth == 0:
            return points
        left, right = _counts(cells((depth - 1, index // 2)))
        return right if index % 2 else left

    total, memo = Fraction(0), {}
    for skel in skeletons(m):
        prior, like = _skeleton_term(skel, (0, 0), m, beta, cells, memo)
        total += prior * like
    return total


def exact_finite_evidence(data: Sequence[float], m: int,
                          config: ModelConfig = DEFAULT_CONFIG) -> Fraction:
    """The depth-``m`` evidence recursion carried out in rational arithmetic."""
    beta = Fraction(config.split_prior)

    def rec(points, depth):
        if depth == m:
            return Fraction(1)
        left, right = _counts(points)
        split = rec(left, depth + 1) * rec(right, depth + 1) / _exact_weight(len(left), len(right))
        return (1 - beta) + beta * split

    return rec([Fraction(float(x)) for x in data], 0)


# ---------------------------------------------------------------------------
# finite-depth reference recursion


def finite_depth_evaluate(data: Sequence[float], m: int, query=None,
                          config: ModelConfig = DEFAULT_CONFIG) -> NodeSummary:
    """Summary of the tree truncated at height ``m``; bottom cells are uniform."""
    if m < 0:
        raise ValueError("m must be nonnegative")
    xs = sorted(float(x) for x in data)
    stop = NodeSummary(0.0, 0.0, 0.0, 0.0,
                       DimensionDistribution.from_probs(np.eye(config.dim_trunc)[0]), 1)

    # an empty cell, or a singleton away from the query, depends on its depth only
    memo = {}

    def rec(xs, q, depth):
        if depth == m:
            return stop
        key = (len(xs), depth) if len(xs) <= 1 and not q.is_inside else None
        if key in memo:
            return memo[key]
        out = split(xs, q, depth)
        if key is not None:
            memo[key] = out
        return out

    def split(xs, q, depth):
        left = [2.0 * x for x in xs if x < 0.5]
        right = [2.0 * x - 1.0 for x in xs if x >= 0.5]
        q0, q1 = q.children()
        return combine(rec(left, q0, depth + 1), rec(right, q1, depth + 1),
                       SplitCounts(len(left), len(right)), q, config)

    return rec(xs, QueryPosition.coerce(query), 0)


# ---------------------------------------------------------------------------
# reference densities


@dataclass(frozen=True)
class TestDistribution:
    """A density on [0, 1) with its CDF and inverse CDF."""

    name: str
    pdf: Callable[[np.ndarray], np.ndarray]
    cdf: Callable[[np.ndarray], np.ndarray]
    ppf: Callable[[np.ndarray], np.ndarray]
    breakpoints: tuple[float, ...] = ()
    mean: float | None = None

    __test__ = False  # not a pytest class

    def total_mass(self) -> float:
        """Quadrature of the density over [0, 1)."""
        edges = (0.0, *self.breakpoints, 1.0)
        return sum(
            integrate.quad(lambda x: float(self.pdf(np.array(x))), a, b, limit=200,
                           epsabs=1e-13, epsrel=1e-13)[0]
            for a, b in zip(edges[:-1], edges[1:])
        )


def _step_pdf(x):
    return np.where(np.asarray(x) < 0.5, 2.0, 0.0)


_QUARTERS = np.array([0.5, 1.5, 1.0, 1.0])
_QUARTER_CDF = np.concatenate(([0.0], np.cumsum(_QUARTERS) / 4))


def _quarters_pdf(x):
    return _QUARTERS[np.minimum((np.asarray(x) * 4).astype(int), 3)]


def _quarters_cdf(x):
    x = np.asarray(x, dtype=float)
    i = np.minimum((x * 4).astype(int), 3)
    return _QUARTER_CDF[i] + _QUARTERS[i] * (x - i / 4)


def _quarters_ppf(u):
    u = np.asarray(u, dtype=float)
    i = np.minimum(np.searchsorted(_QUARTER_CDF, u, side="right") - 1, 3)
    return i / 4 + (u - _QUARTER_CDF[i]) / _QUARTERS[i]


_BETA = stats.beta(2.0, 5.0)

DISTRIBUTIONS: dict[str, TestDistribution] = {
    # normalised version of the singular density 2 / sqrt(1 - x)
    "singular": TestDistribution(
        "singular",
        pdf=lambda x: 0.5 / np.sqrt(1.0 - np.asarray(x)),
        cdf=lambda x: 1.0 - np.sqrt(1.0 - np.asarray(x)),
        ppf=lambda u: 1.0 - (1.0 - np.asarray(u)) ** 2,
        mean=1.0 / 3.0,
    ),
    "linear": TestDistribution(
        "linear",
        pdf=lambda x: 2.0 * np.asarray(x),
        cdf=lambda x: np.asarray(x) ** 2,
        ppf=lambda u: np.sqrt(np.asarray(u)),
        mean=2.0 / 3.0,
    ),
    "beta": TestDistribution("beta", _BETA.pdf, _BETA.cdf, _BETA.ppf, mean=2.0 / 7.0),
    "step": TestDistribution(
        "step",
        pdf=_step_pdf,
        cdf=lambda x: np.minimum(2.0 * np.asarray(x), 1.0),
        ppf=lambda u: 0.5 * np.asarray(u),
        breakpoints=(0.5,),
        mean=0.25,
    ),
    "quarters": TestDistribution(
        "quarters", _quarters_pdf, _quarters_cdf, _quarters_ppf,
        breakpoints=(0.25, 0.5, 0.75), mean=float(np.dot(_QUARTERS / 4, [0.125, 0.375, 0.625, 0.875])),
    ),
}


def get_distribution(name: str) -> TestDistribution:
    try:
        return DISTRIBUTIONS[name]
    except KeyError:
        raise ValueError(f"unknown distribution {name!r}; choose from {sorted(DISTRIBUTIONS)}") from None


def sample_test_distribution(dist: TestDistribution | str, n: int, seed=None) -> np.ndarray:
    """Sorted inverse-CDF sample of size ``n``."""
    if isinstance(dist, str):
        dist = get_distribution(dist)
    if n < 0:
        raise ValueError("n must be nonnegative")
    u = np.random.default_rng(seed).random(n)
    x = np.asarray(dist.ppf(u), dtype=float)
    # ppf can round onto 1.0 for u within an ulp of 1
    x = np.minimum(x, np.nextafter(1.0, 0.0))
    return np.sort(x)


# ---------------------------------------------------------------------------
# consistency experiment


@dataclass
class ExperimentRow:
    n: int
    error: float
    log_evidence: float
    mean_dim: float
    dims: DimensionDistribution
    avg_height: float
    node_count: int
    density: np.ndarray = field(repr=False)
    heights: np.ndarray = field(repr=False)


@dataclass
class ExperimentReport:
    distribution: str
    grid: np.ndarray = field(repr=False)
    truth: np.ndarray = field(repr=False)
    rows: list[ExperimentRow]

    @property
    def errors(self) -> list[float]:
        return [row.error for row in self.rows]

    @property
    def mean_dims(self) -> list[float]:
        return [row.mean_dim for row in self.rows]


def error_grid(grid_size: int, lo: float = 0.01, hi: float = 0.99) -> np.ndarray:
    """Cell midpoints ``(i + 1/2) / grid_size`` restricted to [lo, hi]."""
    x = (np.arange(grid_size) + 0.5) / grid_size
    return x[(x >= lo) & (x <= hi)]


def consistency_experiment(dist: TestDistribution | str, sizes: Sequence[int], grid_size: int = 1000,
                           config: ModelConfig = DEFAULT_CONFIG, seed=0) -> ExperimentReport:
    """Fit growing samples and track how far the predictive is from the truth.

    The error is the mean of ``|ln(p(x|D) / q(x))|`` over grid points where
    the true density is positive.
    """
    if isinstance(dist, str):
        dist = get_distribution(dist)
    if any(b <= a for a, b in zip(sizes[:-1], sizes[1:])):
        raise ValueError("sizes must be increasing")
    grid = error_grid(grid_size)
    truth = np.asarray(dist.pdf(grid), dtype=float)
    support = truth > 0
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    rows = []
    for n, s in zip(sizes, seeds):
        tree = build(sample_test_distribution(dist, n, s), config)
        dens = np.array([predictive_density(tree, x) for x in grid])
        heights = np.array([height_at(tree, x) for x in grid])
        error = float(np.mean(np.abs(np.log(dens[support] / truth[support]))))
        dims = tree.summary.dims
        rows.append(ExperimentRow(n, error, tree.log_evidence, dims.mean(), dims,
                                  tree.root.avg_height, tree.root.node_count, dens, heights))
    return ExperimentReport(dist.name, grid, truth, rows)
