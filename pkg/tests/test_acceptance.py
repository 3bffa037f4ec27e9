"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the verdict lines
bypass output capture.
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest
from scipy import stats

from treemix.core import ModelConfig, evaluate, log_weight, prior_dim_coeffs
from treemix.testkit import (
    consistency_experiment,
    finite_depth_evaluate,
    oracle_evidence,
    sample_test_distribution,
)
from treemix.tree import (
    build,
    cdf,
    insert,
    node_stats,
    predictive_density,
    remove,
    sample,
)


@pytest.fixture
def verdict(capsys):
    """Print ``[AC n] PASS/FAIL name: detail`` and fail the test on FAIL."""
    def emit(number, name, checks):
        failed = [label for label, ok in checks if not ok]
        status = "FAIL" if failed else "PASS"
        detail = "; ".join(failed) if failed else "all checks hold"
        with capsys.disabled():
            print(f"\n[AC {number:2d}] {status} {name}: {detail}")
        assert not failed, failed

    return emit


def best_time(fn, repeat=5):
    best = math.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def separation_depth(data):
    depths = node_stats(build(data)).leaf_depths
    return max(depths) if depths else 0


def all_nodes(node):
    stack = [node]
    while stack:
        node = stack.pop()
        yield node
        if not node.is_leaf:
            stack.extend((node.right, node.left))


def trees_close(a, b, tol):
    na, nb = list(all_nodes(a.root)), list(all_nodes(b.root))
    if len(na) != len(nb):
        return False
    for x, y in zip(na, nb):
        if (x.n, x.depth, x.node_count) != (y.n, y.depth, y.node_count):
            return False
        if abs(x.log_evidence - y.log_evidence) > tol or abs(x.avg_height - y.avg_height) > tol:
            return False
        if np.max(np.abs(x.probs - y.probs)) > tol:
            return False
    return True


def test_ac01_prior_coefficients(verdict):
    exact = prior_dim_coeffs(7, Fraction(1, 2))
    listed = [Fraction(1, 2), Fraction(1, 8), Fraction(1, 16), Fraction(5, 128),
              Fraction(7, 256), Fraction(21, 1024), Fraction(33, 2048)]
    floats = prior_dim_coeffs(31, 0.5)
    closed = [Fraction(math.comb(2 * k, k), 2 * (k + 1) * 4 ** k) for k in range(31)]
    rel = max(abs(v - float(c)) / float(c) for v, c in zip(floats, closed))
    elapsed = best_time(lambda: prior_dim_coeffs(7, Fraction(1, 2)))
    verdict(1, "prior dimension coefficients", [
        ("exact rational list", exact == listed),
        (f"closed form to k=30 (rel {rel:.1e})", rel <= 1e-12),
        (f"runtime {elapsed * 1e3:.3f} ms < 1 ms", elapsed < 1e-3),
    ])


def test_ac02_closed_form_leaves(verdict):
    rng = np.random.default_rng(2)
    singles = [evaluate([float(x)]) for x in rng.random(50)]
    verdict(2, "closed-form leaves", [
        ("empty evidence is 1", evaluate([]).log_evidence == 0.0),
        ("single-point evidence is 1", all(s.log_evidence == 0.0 for s in singles)),
        ("E[h(x)|empty] = 1", all(abs(evaluate([], query=float(q)).height_at_query - 1) <= 1e-12
                                  for q in rng.random(20))),
        ("E[avg height|one point] = 1", all(abs(s.avg_height - 1) <= 1e-12 for s in singles)),
    ])


def test_ac03_oracle_equivalence(verdict):
    rng = np.random.default_rng(3)
    worst, exact_ok = 0.0, True
    t0 = time.perf_counter()
    for _ in range(100):
        data = np.sort(rng.random(rng.integers(0, 7)))
        for m in range(5):
            ref = float(oracle_evidence(data, m))
            got = math.exp(finite_depth_evaluate(data, m).log_evidence)
            worst = max(worst, abs(got - ref) / ref)
        sep = separation_depth(data)
        inf = evaluate(data).log_evidence
        for m in range(sep + 1, sep + 4):
            exact_ok &= finite_depth_evaluate(data, m).log_evidence == inf
    elapsed = time.perf_counter() - t0
    verdict(3, "oracle equivalence", [
        (f"finite vs oracle rel {worst:.1e} <= 1e-12", worst <= 1e-12),
        ("infinite equals finite past separation exactly", exact_ok),
        (f"runtime {elapsed:.2f} s < 10 s", elapsed < 10),
    ])


def test_ac04_hand_values(verdict):
    pair = evaluate([0.2, 0.7], query=0.2)
    a = prior_dim_coeffs(16, 0.5)
    # singleton children: probs[k+1] = g * (a*a)_k = 0.4 * a_{k+1} / 0.5
    dims_ref = [0.6] + [0.8 * v for v in a[1:]]
    close = pair.log_evidence
    verdict(4, "hand values", [
        ("evidence(0.2,0.7) = 5/6", abs(math.exp(close) - 5 / 6) <= 1e-12),
        ("evidence(0.1,0.3) = 19/18", abs(evaluate([0.1, 0.3]).evidence - 19 / 18) <= 1e-12),
        ("oracle agrees", oracle_evidence([0.2, 0.7], 4) == Fraction(5, 6)
         and oracle_evidence([0.1, 0.3], 4) == Fraction(19, 18)),
        ("dims(0.2,0.7) = (3/5, 1/10, ...)",
         np.max(np.abs(pair.dims.probs - dims_ref)) <= 1e-12 and abs(pair.dims.probs[1] - 0.1) <= 1e-12),
        ("heights at 0.2 = (4/5, 4/5)",
         abs(pair.height_at_query - 0.8) <= 1e-12 and abs(pair.avg_height - 0.8) <= 1e-12),
    ])


def test_ac05_extra_depth_invariance(verdict):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(10):
        data = np.sort(rng.random(rng.integers(0, 20)))
        for q in [None, float(rng.random())] + ([float(data[0])] if len(data) else []):
            base = evaluate(data, query=q)
            for extra in range(1, 7):
                forced = evaluate(data, query=q, extra_depth=extra)
                worst = max(worst,
                            abs(forced.log_evidence - base.log_evidence),
                            abs(forced.split_posterior - base.split_posterior),
                            abs(forced.height_at_query - base.height_at_query),
                            abs(forced.avg_height - base.avg_height),
                            float(np.max(np.abs(forced.dims.probs - base.dims.probs))),
                            abs(forced.dims.tail_mass - base.dims.tail_mass))
    verdict(5, "extra recursion depth invariance", [
        (f"max deviation {worst:.1e} <= 1e-10", worst <= 1e-10),
    ])


def test_ac06_predictive_normalisation(verdict):
    rng = np.random.default_rng(6)
    grid = (np.arange(10_000) + 0.5) / 10_000
    integrals = {}
    for n in (0, 10, 1000):
        tree = build(rng.random(n))
        integrals[n] = float(np.mean([predictive_density(tree, x) for x in grid]))
    tree = build(rng.random(200))
    worst = 0.0
    for _ in range(100):
        data = np.sort(rng.random(rng.integers(0, 30)))
        x = float(rng.random())
        two_call = math.exp(evaluate(np.sort(np.append(data, x))).log_evidence
                            - evaluate(data).log_evidence)
        worst = max(worst, abs(predictive_density(build(data), x) - two_call))
    verdict(6, "predictive normalisation", [
        (f"integrals {[round(v, 6) for v in integrals.values()]} within 1e-3",
         all(abs(v - 1) < 1e-3 for v in integrals.values())),
        ("cdf(0) = 0 and cdf(1) = 1 exactly", cdf(tree, 0.0) == 0.0 and cdf(tree, 1.0) == 1.0),
        (f"two-call vs path-local {worst:.1e} <= 1e-10", worst <= 1e-10),
    ])


def test_ac07_incremental_updates(verdict):
    rng = np.random.default_rng(7)
    stored = list(rng.random(100))
    tree = build(stored)
    ok = True
    for step in range(1000):
        if stored and rng.random() < 0.5:
            tree = remove(tree, stored.pop(int(rng.integers(len(stored)))))
        else:
            x = float(rng.random())
            stored.append(x)
            tree = insert(tree, x)
        if step % 50 == 49:
            ok &= trees_close(tree, build(stored), 1e-12)
    ok &= trees_close(tree, build(stored), 1e-12)
    x = 0.31415926
    roundtrip = abs(remove(insert(tree, x), x).log_evidence - tree.log_evidence)
    verdict(7, "incremental updates", [
        ("every node matches a rebuild within 1e-12", ok),
        (f"insert-then-remove {roundtrip:.1e} <= 1e-12", roundtrip <= 1e-12),
    ])


def test_ac08_sampler(verdict):
    n = 10_000
    critical = stats.kstwo.ppf(0.99, n)
    trees = {
        "empty": build([]),
        "100 uniform": build(np.random.default_rng(8).random(100)),
        "step": build(sample_test_distribution("step", 100, seed=8)),
    }
    checks = []
    for name, tree in trees.items():
        xs = sample(tree, np.random.default_rng(80), size=n)
        d = stats.kstest(xs, np.vectorize(lambda a: cdf(tree, float(a)))).statistic
        checks.append((f"{name}: KS {d:.4f} < {critical:.4f}", d < critical))
    verdict(8, "posterior predictive sampler", checks)


def test_ac09_consistency(verdict):
    t0 = time.perf_counter()
    sizes = [100, 1000, 10_000]
    sing = consistency_experiment("singular", sizes, 1000, seed=0)
    step = consistency_experiment("step", sizes, 1000, seed=0)
    elapsed = time.perf_counter() - t0
    e, d, sd = sing.errors, sing.mean_dims, step.mean_dims
    drift = abs(sd[2] - sd[1]) / sd[1]
    verdict(9, "consistency experiment", [
        (f"singular errors {[round(v, 4) for v in e]} strictly decrease", e[0] > e[1] > e[2]),
        (f"step error at 1e4 {step.errors[2]:.2e} < 0.1", step.errors[2] < 0.1),
        (f"singular mean dimension {[round(v, 2) for v in d]} grows", d[0] < d[1] < d[2]),
        (f"step mean dimension {[round(v, 3) for v in sd]} stabilises (drift {drift:.1%} < 2%)",
         drift < 0.02),
        (f"runtime {elapsed:.1f} s < 60 s", elapsed < 60),
    ])


def test_ac10_performance(verdict):
    cfg = ModelConfig(dim_trunc=16)
    data = np.random.default_rng(10).random(100_000)
    build(data[:1000], cfg)  # warm caches
    t0 = time.perf_counter()
    build(data, cfg)
    elapsed = time.perf_counter() - t0
    ratios = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        small = build(rng.random(2000), cfg).root.node_count
        big = build(rng.random(4000), cfg).root.node_count
        ratios.append(big / small)
    mean_ratio = float(np.mean(ratios))
    verdict(10, "performance", [
        (f"build of 1e5 points {elapsed:.2f} s < 2 s", elapsed < 2.0),
        (f"node_count ratio {mean_ratio:.3f} in [1.6, 2.4]", 1.6 <= mean_ratio <= 2.4),
    ])


def test_ac11_weight_asymptotics(verdict):
    w = math.exp(log_weight(500, 500))
    exact = Fraction(math.factorial(1001), math.factorial(500) ** 2 * 2 ** 1000)
    ref = math.sqrt(2000 / math.pi)
    ns = np.arange(200, 10_001, 10)
    lw = np.array([log_weight(int(n * 6 // 10), int(n * 4 // 10)) for n in ns])
    verdict(11, "weight asymptotics", [
        (f"w(500,500) = {w:.4f} vs {ref:.4f}", abs(w / ref - 1) < 0.05),
        ("exact rational agrees", abs(float(exact) / ref - 1) < 0.05 and abs(w / float(exact) - 1) < 1e-10),
        ("w decreasing at imbalance 0.1 for n >= 200", bool(np.all(np.diff(lw) < 0))),
    ])
