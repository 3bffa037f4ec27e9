"""Encoders from other sample spaces onto the unit interval.

The model only ever sees a stream of left/right decisions. Points of the
unit interval give that stream through their binary expansion; hypercubes
interleave the expansions of their coordinates; unbounded domains are first
squeezed into (0, 1) by a monotone map; a two-class label becomes the very
first decision.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import count
from typing import Callable, Iterator, Sequence

from .core import ModelConfig
from .tree import FittedTree, log_evidence_with

__all__ = [
    "BitStream",
    "DomainKind",
    "DomainSpec",
    "classify",
    "compactify_positive",
    "compactify_real",
    "encode_classified",
    "encode_cube",
    "encode_unit",
    "expand_real",
    "parse_domain",
]

#: Bits a double can carry exactly once a stream is turned back into a number.
MATERIALIZE_BITS = 52


@dataclass(frozen=True)
class BitStream:
    """Lazily generated binary expansion; ``bit(i)`` is the i-th decision."""

    bit: Callable[[int], int]
    origin: str = ""

    def __getitem__(self, i: int) -> int:
        if i < 0:
            raise IndexError(i)
        return self.bit(i)

    def __iter__(self) -> Iterator[int]:
        return (self.bit(i) for i in count())

    def take(self, k: int) -> list[int]:
        return [self.bit(i) for i in range(k)]

    def to_unit(self, nbits: int = MATERIALIZE_BITS) -> float:
        """The point of [0, 1) whose expansion is the first ``nbits`` bits, then zeros."""
        nbits = min(nbits, MATERIALIZE_BITS)
        k = 0
        for b in self.take(nbits):
            k = (k << 1) | b
        return math.ldexp(k, -nbits)


def _check_unit(x: float, what: str = "x") -> float:
    x = float(x)
    if not 0.0 <= x < 1.0:
        raise ValueError(f"{what} must lie in [0, 1), got {x!r}")
    return x


def encode_unit(x: float) -> BitStream:
    x = _check_unit(x)
    num, den = Fraction(x).as_integer_ratio()
    return BitStream(lambda i: ((num << (i + 1)) // den) & 1, origin=f"unit({x!r})")


def encode_cube(point: Sequence[float]) -> BitStream:
    """Interleave coordinates: decision ``i`` halves dimension ``i mod d``."""
    coords = [encode_unit(_check_unit(c, "coordinate")) for c in point]
    d = len(coords)
    if d == 0:
        raise ValueError("a cube point needs at least one coordinate")
    return BitStream(lambda i: coords[i % d][i // d], origin=f"cube{tuple(point)!r}")


def compactify_positive(x: float) -> float:
    """Map (1, inf) onto (0, 1) by ``1/x``."""
    x = float(x)
    if not x > 1.0:
        raise ValueError(f"positive-domain points must exceed 1, got {x!r}")
    return 1.0 / x


def compactify_real(y: float) -> float:
    """Inverse of ``x -> (2x - 1) / (x (1 - x))``, a monotone bijection (0, 1) -> R.

    Solves ``y x^2 + (2 - y) x - 1 = 0`` for its root in (0, 1). Uses the
    symmetry ``x(-y) = 1 - x(y)`` so that the small quantity (``x`` or
    ``1 - x``) is always formed without cancellation.
    """
    y = float(y)
    if not math.isfinite(y):
        raise ValueError(f"real-domain points must be finite, got {y!r}")
    if y == 0.0:
        return 0.5
    small = 2.0 / ((2.0 + abs(y)) + math.hypot(y, 2.0))
    return small if y < 0 else 1.0 - small


def expand_real(x: float) -> float:
    """Forward map (0, 1) -> R of :func:`compactify_real`."""
    return (2.0 * x - 1.0) / (x * (1.0 - x))


def encode_classified(observation: BitStream, label: int) -> BitStream:
    """Put the class label at the root split, then the observation bits."""
    if label not in (0, 1):
        raise ValueError(f"class label must be 0 or 1, got {label!r}")
    return BitStream(lambda i: label if i == 0 else observation[i - 1],
                     origin=f"class {label} of {observation.origin}")


def classify(tree: FittedTree, observation: BitStream) -> float:
    """Posterior probability that ``observation`` belongs to class 1.

    The two candidate points are materialised with the tree's ``max_depth``
    bits (at most 52).
    """
    nbits = tree.config.max_depth
    lp = [log_evidence_with(tree, encode_classified(observation, c).to_unit(nbits))
          for c in (0, 1)]
    hi = max(lp)
    w0, w1 = math.exp(lp[0] - hi), math.exp(lp[1] - hi)
    return w1 / (w0 + w1)


class DomainKind(enum.Enum):
    UNIT = "unit"
    POSITIVE = "positive"
    REAL = "real"
    CUBE = "cube"
    CLASSIFY = "classify"


@dataclass(frozen=True)
class DomainSpec:
    kind: DomainKind = DomainKind.UNIT
    dim: int = 1

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("cube dimension must be at least 1")

    @property
    def width(self) -> int:
        """Number of numeric fields per input record (label included)."""
        if self.kind is DomainKind.CUBE:
            return self.dim
        if self.kind is DomainKind.CLASSIFY:
            return 2
        return 1

    def encode(self, fields: Sequence[float], config: ModelConfig) -> float:
        """Map one record to the unit-interval value the engine consumes."""
        if len(fields) != self.width:
            raise ValueError(f"expected {self.width} field(s), got {len(fields)}")
        kind = self.kind
        if kind is DomainKind.UNIT:
            return _check_unit(fields[0])
        if kind is DomainKind.POSITIVE:
            return compactify_positive(fields[0])
        if kind is DomainKind.REAL:
            return compactify_real(fields[0])
        if kind is DomainKind.CUBE:
            return encode_cube(fields).to_unit(config.max_depth)
        label = fields[1]
        if label not in (0, 1):
            raise ValueError(f"class label must be 0 or 1, got {label!r}")
        return encode_classified(encode_unit(fields[0]), int(label)).to_unit(config.max_depth)

    def __str__(self):
        return f"cube:{self.dim}" if self.kind is DomainKind.CUBE else self.kind.value


def parse_domain(text: str) -> DomainSpec:
    """``unit``, ``positive``, ``real``, ``classify`` or ``cube:<d>``."""
    if text.startswith("cube:"):
        try:
            d = int(text[5:])
        except ValueError:
            raise ValueError(f"bad cube dimension in {text!r}") from None
        return DomainSpec(DomainKind.CUBE, d)
    if text == "cube":
        return DomainSpec(DomainKind.CUBE, 1)
    try:
        return DomainSpec(DomainKind(text))
    except ValueError:
        raise ValueError(f"unknown domain {text!r}") from None
