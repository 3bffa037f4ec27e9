"""Explicit tree down to the separation level with cached node summaries.

Once every node's evidence is stored, anything local to a point only has to
walk that point's root-to-leaf path: the sibling off the path contributes
its cached evidence unchanged. Predictive density, distribution function,
heights, sampling and single-point updates are all such path recursions.

Below a stored singleton leaf the model keeps splitting forever; that part
of the tree is never stored and is followed lazily where a query needs it.
"""

from __future__ import annotations

import math
from itertools import repeat
from operator import itemgetter
from dataclasses import dataclass, field

import numpy as np

from .core import (
    DEFAULT_CONFIG,
    DimensionDistribution,
    DuplicateDataError,
    ModelConfig,
    NodeSummary,
    SplitCounts,
    _closed_leaf,
    _truncated_leaf,
    check_data,
    combine_arrays,
    log_weight,
)

__all__ = [
    "CellReport",
    "FittedTree",
    "TreeNode",
    "TreeStats",
    "build",
    "cdf",
    "height_at",
    "insert",
    "log_evidence_with",
    "map_skeleton",
    "node_stats",
    "node_visits",
    "predictive_density",
    "remove",
    "sample",
]

_visits = 0


def node_visits() -> int:
    """Running count of nodes touched by path operations (instrumentation)."""
    return _visits


class TreeNode(tuple):
    """A cell of the explicit tree; leaves carry their data points.

    Nodes are immutable tuples, so updated trees share every node off the
    updated path with their predecessor. Fields, in order: depth, n,
    log_evidence, split_posterior, avg_height, probs, tail_mass, node_count,
    left, right, data.
    """

    __slots__ = ()

    depth = property(itemgetter(0))
    n = property(itemgetter(1))
    log_evidence = property(itemgetter(2))
    split_posterior = property(itemgetter(3))
    avg_height = property(itemgetter(4))
    probs = property(itemgetter(5))
    tail_mass = property(itemgetter(6))
    node_count = property(itemgetter(7))
    left = property(itemgetter(8))
    right = property(itemgetter(9))
    data = property(itemgetter(10))

    # tuple equality would recurse into the dims arrays
    __eq__ = object.__eq__
    __ne__ = object.__ne__
    __hash__ = object.__hash__

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    @property
    def counts(self) -> SplitCounts:
        if self.is_leaf:
            n_left = sum(1 for x in self.data if _residual(x, self.depth) < 0.5)
            return SplitCounts(n_left, self.n - n_left)
        return SplitCounts(self.left.n, self.right.n)

    @property
    def summary(self) -> NodeSummary:
        return NodeSummary(self.log_evidence, self.split_posterior, 0.0, self.avg_height,
                           DimensionDistribution(self.probs, self.tail_mass), self.node_count)

    def __repr__(self):
        kind = "leaf" if self.is_leaf else "node"
        return f"<{kind} depth={self.depth} n={self.n} log_evidence={self.log_evidence:.6g}>"


@dataclass(frozen=True)
class FittedTree:
    root: TreeNode
    config: ModelConfig = field(default=DEFAULT_CONFIG)

    @property
    def n(self) -> int:
        return self.root.n

    @property
    def log_evidence(self) -> float:
        return self.root.log_evidence

    @property
    def summary(self) -> NodeSummary:
        return self.root.summary

    def data(self) -> list[float]:
        """Stored data in ascending order."""
        out = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                out.extend(node.data)
            else:
                stack.append(node.right)
                stack.append(node.left)
        return out


@dataclass(frozen=True)
class CellReport:
    lo: float
    hi: float
    depth: int
    count: int
    is_map_leaf: bool = True


@dataclass(frozen=True)
class TreeStats:
    n: int
    log_evidence: float
    dims: DimensionDistribution
    avg_height: float
    node_count: int
    leaf_depths: dict[int, int]


def _residual(x: float, depth: int) -> float:
    """Coordinate of ``x`` relative to its dyadic cell at ``depth`` (exact)."""
    y = math.ldexp(x, depth)
    return y - math.floor(y)


# ---------------------------------------------------------------------------
# construction


def _leaf_node(depth: int, data: tuple, config: ModelConfig) -> TreeNode:
    if len(data) <= 1:
        s = _closed_leaf(config, False)
    else:
        if config.duplicate_policy == "error":
            raise DuplicateDataError(
                f"{len(data)} data points are indistinguishable at depth {config.max_depth}"
            )
        s = _truncated_leaf(config)
    return TreeNode((depth, len(data), s.log_evidence, s.split_posterior, s.avg_height,
                     s.dims.probs, s.dims.tail_mass, 1, None, None, data))


def _join(left: TreeNode, right: TreeNode, depth: int, config: ModelConfig) -> TreeNode:
    one = lambda v: np.array([v], dtype=float)  # noqa: E731
    zero = one(0.0)
    log_ev, g, _, avg, probs, tail = combine_arrays(
        one(left.log_evidence), one(right.log_evidence),
        np.array([left.n]), np.array([right.n]), zero, zero,
        one(left.avg_height), one(right.avg_height),
        left.probs[None, :], right.probs[None, :], config,
    )
    return TreeNode((depth, left.n + right.n, float(log_ev[0]), float(g[0]), float(avg[0]),
                     probs[0], float(tail[0]), 1 + left.node_count + right.node_count,
                     left, right, ()))


def _grow(values: list[float], depth: int, config: ModelConfig) -> TreeNode:
    """Build the subtree for a handful of sorted values inside one cell."""
    if len(values) <= 1 or depth >= config.max_depth:
        return _leaf_node(depth, tuple(values), config)
    left = [v for v in values if _residual(v, depth) < 0.5]
    right = values[len(left):]
    return _join(_grow(left, depth + 1, config), _grow(right, depth + 1, config), depth, config)


def build(data, config: ModelConfig = DEFAULT_CONFIG) -> FittedTree:
    """Fit the tree to data on [0, 1) (any order).

    The tree is grown breadth-first with all nodes of one depth handled as
    arrays, then summarised bottom-up with the same combination kernel the
    recursive :func:`treemix.core.evaluate` uses.
    """
    xs = np.sort(check_data(data, require_sorted=False))
    n = len(xs)

    # top-down: contiguous segments of the sorted data, one per node
    levels = []
    start = np.zeros(1, dtype=np.int64)
    count = np.array([n], dtype=np.int64)
    resid = xs.copy()
    depth = 0
    while True:
        internal = count >= 2
        if depth >= config.max_depth:
            internal[:] = False
            if config.duplicate_policy == "error" and np.any(count >= 2):
                raise DuplicateDataError(
                    f"{int(count.max())} data points are indistinguishable at depth "
                    f"{config.max_depth}"
                )
        s, c = start[internal], count[internal]
        if s.size == 0:
            levels.append((start, count, internal, None))
            break
        is_left = np.concatenate(([0], np.cumsum(resid < 0.5)))
        n_left = is_left[s + c] - is_left[s]
        levels.append((start, count, internal, n_left))

        # rescale the points that move one level down
        edge = np.bincount(s, minlength=n + 1) - np.bincount(s + c, minlength=n + 1)
        moving = np.cumsum(edge[:n]) > 0
        upper = resid >= 0.5
        resid = np.where(moving, np.where(upper, 2.0 * resid - 1.0, 2.0 * resid), resid)

        start = np.stack([s, s + n_left], axis=1).reshape(-1)
        count = np.stack([n_left, c - n_left], axis=1).reshape(-1)
        depth += 1

    # bottom-up: summaries and node objects
    prior = _closed_leaf(config, False)
    trunc = _truncated_leaf(config)
    xs_list = xs.tolist()
    below = None  # (lp, g, avg, probs, tail, node_count, nodes) of the level below
    for depth in range(len(levels) - 1, -1, -1):
        start, count, internal, n_left = levels[depth]
        M = len(start)
        lp = np.zeros(M)
        g = np.where(count >= 2, trunc.split_posterior, prior.split_posterior)
        avg = np.where(count >= 2, trunc.avg_height, prior.avg_height)
        probs = np.where((count >= 2)[:, None], trunc.dims.probs, prior.dims.probs)
        tail = np.where(count >= 2, trunc.dims.tail_mass, prior.dims.tail_mass)
        nc = np.ones(M, dtype=np.int64)
        idx = np.flatnonzero(internal)
        if idx.size:
            blp, bg, bavg, bprobs, btail, bnc, bnodes = below
            L, R = slice(0, None, 2), slice(1, None, 2)
            out = combine_arrays(
                blp[L], blp[R], n_left, count[idx] - n_left,
                np.zeros(idx.size), np.zeros(idx.size), bavg[L], bavg[R],
                bprobs[L], bprobs[R], config,
            )
            lp[idx], g[idx], _, avg[idx], probs[idx], tail[idx] = out
            nc[idx] = 1 + bnc[L] + bnc[R]

        nodes = [None] * M
        if idx.size:
            made = map(TreeNode, zip(
                repeat(depth), count[idx].tolist(), lp[idx].tolist(), g[idx].tolist(),
                avg[idx].tolist(), probs[idx], tail[idx].tolist(), nc[idx].tolist(),
                bnodes[0::2], bnodes[1::2], repeat(()),
            ))
            for i, node in zip(idx.tolist(), made):
                nodes[i] = node
        # leaves share the closed-form dims arrays; grouped by occupancy
        for sel, leaf, data in (
            (count == 0, prior, lambda pos: repeat(())),
            (count == 1, prior, lambda pos: zip(xs[start[pos]].tolist())),
            ((count >= 2) & ~internal, trunc,
             lambda pos: [tuple(xs_list[i:i + c]) for i, c in zip(start[pos].tolist(),
                                                                   count[pos].tolist())]),
        ):
            pos = np.flatnonzero(sel)
            if not pos.size:
                continue
            made = map(TreeNode, zip(
                repeat(depth), count[pos].tolist(), repeat(0.0), repeat(leaf.split_posterior),
                repeat(leaf.avg_height), repeat(leaf.dims.probs), repeat(leaf.dims.tail_mass),
                repeat(1), repeat(None), repeat(None), data(pos),
            ))
            for i, node in zip(pos.tolist(), made):
                nodes[i] = node
        below = (lp, g, avg, probs, tail, nc, nodes)
    return FittedTree(below[6][0], config)


# ---------------------------------------------------------------------------
# path queries


def _check_point(x: float) -> float:
    x = float(x)
    if not 0.0 <= x < 1.0:
        raise ValueError(f"point must lie in [0, 1), got {x!r}")
    return x


def _mix_scalar(t: float, config: ModelConfig) -> float:
    s = t + config.log_odds
    if s >= config.overflow_threshold:
        return t + config.log_split
    return config.log_uniform + math.log1p(math.exp(s))


def _walk(tree: FittedTree, x: float):
    """Descend to the stored leaf containing ``x``; returns (path, leaf, residual)."""
    global _visits
    node, r, path = tree.root, x, []
    while node.left is not None:
        _visits += 1
        upper = r >= 0.5
        path.append((node, upper))
        r = 2.0 * r - 1.0 if upper else 2.0 * r
        node = node.right if upper else node.left
    _visits += 1
    return path, node, r


def _pair_log_evidence(y: float, r: float, depth: int, config: ModelConfig) -> float:
    """ln p of two points with residuals ``y`` and ``r`` sharing a cell at ``depth``."""
    sides = []
    while depth < config.max_depth and (y >= 0.5) == (r >= 0.5):
        upper = y >= 0.5
        sides.append(upper)
        y, r = (2.0 * y - 1.0, 2.0 * r - 1.0) if upper else (2.0 * y, 2.0 * r)
        depth += 1
    if depth >= config.max_depth:
        if config.duplicate_policy == "error":
            raise DuplicateDataError(f"points are indistinguishable at depth {config.max_depth}")
        lp = 0.0
    else:
        lp = _mix_scalar(0.0 + 0.0 - log_weight(1, 1), config)
    w20 = log_weight(2, 0)
    for upper in reversed(sides):
        t = (0.0 + lp if upper else lp + 0.0) - w20
        lp = _mix_scalar(t, config)
    return lp


def log_evidence_with(tree: FittedTree, x: float) -> float:
    """``ln p(D + {x})`` by recomputing only the nodes on the path of ``x``."""
    x = _check_point(x)
    config = tree.config
    path, leaf, r = _walk(tree, x)
    depth = len(path)
    if leaf.n == 0:
        lp = 0.0
    elif leaf.n == 1 and depth < config.max_depth:
        lp = _pair_log_evidence(_residual(leaf.data[0], depth), r, depth, config)
    else:
        if config.duplicate_policy == "error":
            raise DuplicateDataError(f"points are indistinguishable at depth {config.max_depth}")
        lp = 0.0
    for node, upper in reversed(path):
        if upper:
            lp0, lp1 = node.left.log_evidence, lp
            n0, n1 = node.left.n, node.right.n + 1
        else:
            lp0, lp1 = lp, node.right.log_evidence
            n0, n1 = node.left.n + 1, node.right.n
        lp = _mix_scalar(lp0 + lp1 - log_weight(n0, n1), config)
    return lp


def predictive_density(tree: FittedTree, x: float) -> float:
    """Posterior predictive density ``p(x | D) = p(D, x) / p(D)``."""
    return math.exp(log_evidence_with(tree, x) - tree.root.log_evidence)


def _branch_masses(node: TreeNode) -> tuple[float, float]:
    # posterior mean of the left/right mass under the split branch
    n2 = node.n + 2
    return (node.left.n + 1) / n2, (node.right.n + 1) / n2


def _singleton_cdf(y: float, u: float, depth: int, config: ModelConfig) -> float:
    """Predictive CDF inside a cell holding one point at residual ``y``."""
    b = config.split_prior
    acc, mult = 0.0, 1.0
    while depth < config.max_depth:
        if u < 0.5:
            if y >= 0.5:
                return acc + mult * ((1 - b) * u + b * (2.0 * u) / 3.0)
            acc += mult * (1 - b) * u
            y, u = 2.0 * y, 2.0 * u
        else:
            if y < 0.5:
                return acc + mult * ((1 - b) * u + b * (2.0 + (2.0 * u - 1.0)) / 3.0)
            acc += mult * ((1 - b) * u + b / 3.0)
            y, u = 2.0 * y - 1.0, 2.0 * u - 1.0
        mult *= b * 2.0 / 3.0
        depth += 1
    return acc + mult * u


def cdf(tree: FittedTree, a: float) -> float:
    """Predictive distribution function ``P[x <= a | D]``."""
    a = float(a)
    if not 0.0 <= a <= 1.0:
        raise ValueError(f"a must lie in [0, 1], got {a!r}")
    if a == 0.0:
        return 0.0
    if a == 1.0:
        return 1.0
    global _visits
    config = tree.config
    node, u, depth = tree.root, a, 0
    acc, mult = 0.0, 1.0
    while node.left is not None:
        _visits += 1
        g = node.split_posterior
        q0, q1 = _branch_masses(node)
        if u < 0.5:
            acc += mult * (1.0 - g) * u
            mult *= g * q0
            u, node = 2.0 * u, node.left
        else:
            acc += mult * ((1.0 - g) * u + g * q0)
            mult *= g * q1
            u, node = 2.0 * u - 1.0, node.right
        depth += 1
    _visits += 1
    if node.n == 1:
        inner = _singleton_cdf(_residual(node.data[0], depth), u, depth, config)
    else:
        inner = u
    return min(1.0, max(0.0, acc + mult * inner))


def height_at(tree: FittedTree, x: float) -> float:
    """Expected tree height at ``x`` given the stored data."""
    x = _check_point(x)
    config = tree.config
    path, leaf, r = _walk(tree, x)
    depth = len(path)
    if leaf.n >= 2:
        h = 0.0
    elif leaf.n == 0:
        h = config.leaf_height
    else:
        y, chain, separated = _residual(leaf.data[0], depth), 0, False
        while depth < config.max_depth and y != r:
            upper = y >= 0.5
            if upper != (r >= 0.5):
                separated = True
                break
            y, r = (2.0 * y - 1.0, 2.0 * r - 1.0) if upper else (2.0 * y, 2.0 * r)
            chain += 1
            depth += 1
        h = config.leaf_height
        for _ in range(chain + separated):
            h = config.split_prior * (1.0 + h)
    for node, _ in reversed(path):
        h = node.split_posterior * (1.0 + h)
    return h


def _uniform_in(lo: float, width: float, rng) -> float:
    x = lo + width * rng.random()
    return min(x, math.nextafter(lo + width, 0.0)) if width > 0 else lo


def sample(tree: FittedTree, rng=None, size: int | None = None):
    """Draw from the posterior predictive by ancestral sampling.

    ``rng`` is a :class:`numpy.random.Generator` or a seed. Returns a float,
    or an array when ``size`` is given.
    """
    rng = np.random.default_rng(rng)
    if size is not None:
        return np.array([_sample_one(tree, rng) for _ in range(size)])
    return _sample_one(tree, rng)


def _sample_one(tree: FittedTree, rng) -> float:
    config = tree.config
    node, lo, width, depth = tree.root, 0.0, 1.0, 0
    while node.left is not None:
        if rng.random() >= node.split_posterior:
            return _uniform_in(lo, width, rng)
        q0, _ = _branch_masses(node)
        width *= 0.5
        if rng.random() < q0:
            node = node.left
        else:
            lo += width
            node = node.right
        depth += 1
    if node.n != 1:
        return _uniform_in(lo, width, rng)

    # unstored recursion below a singleton: the occupied half takes 2/3
    y = _residual(node.data[0], depth)
    b = config.split_prior
    while depth < config.max_depth and rng.random() < b:
        width *= 0.5
        occupied = rng.random() < 2.0 / 3.0
        upper = (y >= 0.5) == occupied
        if upper:
            lo += width
        if not occupied:
            return _uniform_in(lo, width, rng)
        y = 2.0 * y - 1.0 if y >= 0.5 else 2.0 * y
        depth += 1
    return _uniform_in(lo, width, rng)


# ---------------------------------------------------------------------------
# updates


def insert(tree: FittedTree, x: float) -> FittedTree:
    """New tree with ``x`` added; only the path of ``x`` is rebuilt."""
    x = _check_point(x)
    return FittedTree(_insert(tree.root, x, x, tree.config), tree.config)


def _insert(node: TreeNode, x: float, r: float, config: ModelConfig) -> TreeNode:
    global _visits
    _visits += 1
    if node.is_leaf:
        return _grow(sorted(node.data + (x,)), node.depth, config)
    if r >= 0.5:
        right = _insert(node.right, x, 2.0 * r - 1.0, config)
        return _join(node.left, right, node.depth, config)
    left = _insert(node.left, x, 2.0 * r, config)
    return _join(left, node.right, node.depth, config)


def remove(tree: FittedTree, x: float) -> FittedTree:
    """New tree with one copy of ``x`` removed (exact match); KeyError if absent."""
    x = float(x)
    if not 0.0 <= x < 1.0:
        raise KeyError(x)
    return FittedTree(_remove(tree.root, x, x, tree.config), tree.config)


def _remove(node: TreeNode, x: float, r: float, config: ModelConfig) -> TreeNode:
    global _visits
    _visits += 1
    if node.is_leaf:
        if x not in node.data:
            raise KeyError(x)
        data = list(node.data)
        data.remove(x)
        return _leaf_node(node.depth, tuple(data), config)
    if r >= 0.5:
        left, right = node.left, _remove(node.right, x, 2.0 * r - 1.0, config)
    else:
        left, right = _remove(node.left, x, 2.0 * r, config), node.right
    if left.n + right.n <= 1:
        rest = FittedTree(left).data() + FittedTree(right).data()
        return _leaf_node(node.depth, tuple(rest), config)
    return _join(left, right, node.depth, config)


# ---------------------------------------------------------------------------
# reports


def map_skeleton(tree: FittedTree) -> list[CellReport]:
    """Leaf cells of the MAP-like tree, left to right.

    A node stays split iff ``p0 p1 / w > 1``; equality counts as a leaf.
    """
    out = []
    stack = [(tree.root, 0)]
    while stack:
        node, k = stack.pop()
        if not node.is_leaf:
            t = node.left.log_evidence + node.right.log_evidence - log_weight(node.left.n, node.right.n)
            if t > 0.0:
                stack.append((node.right, 2 * k + 1))
                stack.append((node.left, 2 * k))
                continue
        d = node.depth
        out.append(CellReport(math.ldexp(k, -d), math.ldexp(k + 1, -d), d, node.n))
    return out


def node_stats(tree: FittedTree) -> TreeStats:
    hist: dict[int, int] = {}
    stack = [tree.root]
    while stack:
        node = stack.pop()
        if node.is_leaf:
            if node.n:
                hist[node.depth] = hist.get(node.depth, 0) + 1
        else:
            stack.append(node.left)
            stack.append(node.right)
    root = tree.root
    return TreeStats(root.n, root.log_evidence, DimensionDistribution(root.probs, root.tail_mass),
                     root.avg_height, root.node_count, dict(sorted(hist.items())))
