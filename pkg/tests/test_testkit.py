import math
from fractions import Fraction
from itertools import combinations_with_replacement

import numpy as np
import pytest
from scipy import stats

from treemix.core import ModelConfig, evaluate
from treemix.testkit import (
    DISTRIBUTIONS,
    consistency_experiment,
    error_grid,
    exact_finite_evidence,
    finite_depth_evaluate,
    get_distribution,
    oracle_evidence,
    sample_test_distribution,
    skeletons,
)

GRID_POINTS = [k / 8 + 1 / 16 for k in range(8)]


def test_skeleton_counts():
    # s(m) = 1 + s(m-1)^2
    assert [len(skeletons(m)) for m in range(5)] == [1, 2, 5, 26, 677]


def test_oracle_examples():
    assert oracle_evidence([0.2, 0.7], 1) == Fraction(5, 6)
    for m in range(5):
        assert oracle_evidence([], m) == 1
    with pytest.raises(ValueError):
        oracle_evidence([0.1], 5)


def test_oracle_exhaustive_small_grid():
    """Every multiset of up to five grid points, every height up to three, exact."""
    for n in range(6):
        for data in combinations_with_replacement(GRID_POINTS, n):
            for m in range(4):
                exact = oracle_evidence(data, m)
                assert exact == exact_finite_evidence(data, m)
                approx = math.exp(finite_depth_evaluate(data, m).log_evidence)
                assert abs(approx - float(exact)) <= 1e-12 * float(exact)


def test_oracle_random_datasets_depth_four():
    rng = np.random.default_rng(0)
    for _ in range(20):
        data = np.sort(rng.random(rng.integers(0, 7)))
        exact = float(oracle_evidence(data, 4))
        approx = math.exp(finite_depth_evaluate(data, 4).log_evidence)
        assert abs(approx - exact) <= 1e-12 * exact


def test_oracle_other_split_prior():
    cfg = ModelConfig(split_prior=0.25)
    data = [0.1, 0.3, 0.35, 0.9]
    for m in range(5):
        exact = oracle_evidence(data, m, cfg)
        assert exact == exact_finite_evidence(data, m, cfg)
        approx = math.exp(finite_depth_evaluate(data, m, config=cfg).log_evidence)
        assert abs(approx - float(exact)) <= 1e-12 * float(exact)


def test_finite_depth_examples():
    data = [0.1, 0.3, 0.55, 0.9]
    assert finite_depth_evaluate(data, 0).log_evidence == 0.0
    inf = evaluate(data)
    values = [finite_depth_evaluate(data, m).log_evidence for m in range(3, 12)]
    assert all(v == inf.log_evidence for v in values)
    with pytest.raises(ValueError):
        finite_depth_evaluate(data, -1)


# ---------------------------------------------------------------------------
# distributions


@pytest.mark.parametrize("name", sorted(DISTRIBUTIONS))
def test_distribution_normalised(name):
    assert abs(DISTRIBUTIONS[name].total_mass() - 1) < 1e-9


@pytest.mark.parametrize("name", sorted(DISTRIBUTIONS))
def test_distribution_cdf_ppf_consistent(name):
    d = DISTRIBUTIONS[name]
    u = np.linspace(0.01, 0.99, 99)
    np.testing.assert_allclose(d.cdf(d.ppf(u)), u, atol=1e-12)


@pytest.mark.parametrize("name", sorted(DISTRIBUTIONS))
def test_sampler_chi_squared(name):
    d = DISTRIBUTIONS[name]
    xs = sample_test_distribution(d, 100_000, seed=123)
    edges = np.concatenate(([0.0], d.ppf(np.arange(1, 50) / 50), [1.0]))
    counts, _ = np.histogram(xs, bins=edges)
    assert stats.chisquare(counts).pvalue > 0.001


def test_singular_ppf_endpoints():
    d = get_distribution("singular")
    assert d.ppf(0.0) == 0.0
    assert d.ppf(1 - 1e-12) == pytest.approx(1.0, abs=1e-12)
    assert sample_test_distribution(d, 10, seed=0).max() < 1.0


def test_step_sample_mean():
    n = 100_000
    xs = sample_test_distribution("step", n, seed=7)
    sigma = math.sqrt(1 / 48 / n)
    assert abs(xs.mean() - 0.25) < 3 * sigma
    assert xs.max() < 0.5


def test_sampler_deterministic_and_sorted():
    a = sample_test_distribution("beta", 500, seed=3)
    np.testing.assert_array_equal(a, sample_test_distribution("beta", 500, seed=3))
    assert np.all(np.diff(a) >= 0)
    with pytest.raises(ValueError):
        get_distribution("cauchy")
    with pytest.raises(ValueError):
        sample_test_distribution("step", -1)


# ---------------------------------------------------------------------------
# consistency experiment


def test_error_grid():
    g = error_grid(1000)
    assert g[0] == pytest.approx(0.0105) and g[-1] == pytest.approx(0.9895)
    assert len(g) == 980


def test_experiment_empty_sample():
    rep = consistency_experiment("linear", [0], grid_size=200)
    grid = rep.grid
    assert rep.rows[0].error == pytest.approx(np.mean(np.abs(np.log(2 * grid))), rel=1e-12)
    np.testing.assert_array_equal(rep.rows[0].density, 1.0)


def test_experiment_step_density():
    rep = consistency_experiment("step", [10_000], grid_size=1000, seed=0)
    assert rep.errors[0] < 0.1


def test_experiment_singular_errors_decrease():
    rep = consistency_experiment("singular", [100, 1000, 10_000], grid_size=1000, seed=0)
    assert rep.errors[0] > rep.errors[1] > rep.errors[2]
    row = rep.rows[-1]
    assert row.heights.shape == rep.grid.shape
    assert abs(row.dims.probs.sum() + row.dims.tail_mass - 1) < 1e-12


def test_experiment_rejects_unsorted_sizes():
    with pytest.raises(ValueError):
        consistency_experiment("step", [100, 10])
