"""Word counting and the length-constraint score."""

from __future__ import annotations

import math
import re
import unicodedata
from dataclasses import dataclass
from typing import Optional, Union

# word tokens keep internal apostrophes/hyphens; everything else that is not
# whitespace becomes a punctuation token
_TOKEN_RE = re.compile(r"[^\W_]+(?:['’\-‐][^\W_]+)*|_+|[^\w\s]+")


def tokenize(text: str) -> list[str]:
    """Split ``text`` into word and punctuation tokens."""
    return _TOKEN_RE.findall(unicodedata.normalize("NFC", text))


def _is_word(token: str) -> bool:
    return any(ch.isalnum() for ch in token)


def count_words(text: str) -> int:
    """Number of tokens in ``text`` that carry at least one letter or digit.

    >>> count_words("Hello, world!")
    2
    >>> count_words("don't stop — state-of-the-art systems.")
    4
    """
    return sum(1 for tok in tokenize(text) if _is_word(tok))


@dataclass(frozen=True)
class Exact:
    target: int

    def __post_init__(self):
        if isinstance(self.target, bool) or not isinstance(self.target, int) or self.target <= 0:
            raise ValueError(f"exact target must be a positive integer, got {self.target!r}")

    def __str__(self) -> str:
        return f"exactly {self.target} words"


@dataclass(frozen=True)
class Interval:
    """Word-count interval ``[lower, upper]``; ``upper=None`` means unbounded.

    ``lower == 0`` is accepted because the interval datasets bound only from
    above.
    """

    lower: int
    upper: Optional[int] = None

    def __post_init__(self):
        if not isinstance(self.lower, int) or self.lower < 0:
            raise ValueError(f"interval lower bound must be a non-negative integer, got {self.lower!r}")
        if self.upper is not None:
            if not isinstance(self.upper, int) or self.upper <= 0:
                raise ValueError(f"interval upper bound must be a positive integer, got {self.upper!r}")
            if self.upper < self.lower:
                raise ValueError(f"empty interval [{self.lower}, {self.upper}]")

    def __str__(self) -> str:
        if self.upper is None:
            return f"at least {self.lower} words"
        return f"{self.lower}-{self.upper} words"


LengthConstraint = Union[Exact, Interval]


def deviation(word_count: int, constraint: LengthConstraint) -> int:
    """Manhattan distance from ``word_count`` to the target (or nearest bound)."""
    if isinstance(constraint, Exact):
        return abs(word_count - constraint.target)
    if word_count < constraint.lower:
        return constraint.lower - word_count
    if constraint.upper is not None and word_count > constraint.upper:
        return word_count - constraint.upper
    return 0


@dataclass(frozen=True)
class ConstraintScore:
    """``1/deviation`` outside the target, a distinguished satisfied value inside.

    The satisfied state compares and converts as ``+inf`` but callers are
    expected to branch on :attr:`satisfied` before doing arithmetic.
    """

    deviation: int

    @property
    def satisfied(self) -> bool:
        return self.deviation == 0

    @property
    def value(self) -> float:
        return math.inf if self.deviation == 0 else 1.0 / self.deviation

    def __float__(self) -> float:
        return self.value

    def __lt__(self, other: "ConstraintScore") -> bool:
        return self.value < float(other)

    def __gt__(self, other: "ConstraintScore") -> bool:
        return self.value > float(other)


def constraint_score(word_count: int, constraint: LengthConstraint) -> ConstraintScore:
    return ConstraintScore(deviation(word_count, constraint))


def is_satisfied(word_count: int, constraint: LengthConstraint) -> bool:
    return deviation(word_count, constraint) == 0


def constraint_from_json(value) -> LengthConstraint:
    """Parse ``46`` / ``[0, 128]`` / ``[10, null]`` / ``{"exact": 50}`` style targets."""
    if isinstance(value, bool):
        raise ValueError(f"invalid length target {value!r}")
    if isinstance(value, int):
        return Exact(value)
    if isinstance(value, (list, tuple)) and len(value) == 2:
        lo, hi = value
        return Interval(int(lo), None if hi is None else int(hi))
    if isinstance(value, dict):
        if "exact" in value:
            return Exact(int(value["exact"]))
        if "lower" in value or "upper" in value:
            hi = value.get("upper")
            return Interval(int(value.get("lower", 0)), None if hi is None else int(hi))
    raise ValueError(f"invalid length target {value!r}")


def constraint_to_json(constraint: LengthConstraint):
    if isinstance(constraint, Exact):
        return constraint.target
    return [constraint.lower, constraint.upper]


def signed_deviation(word_count: int, constraint: LengthConstraint) -> int:
    """Signed distance: positive when too long, negative when too short, 0 inside."""
    d = deviation(word_count, constraint)
    if d == 0:
        return 0
    if isinstance(constraint, Exact):
        return word_count - constraint.target
    return d if word_count > (constraint.upper or math.inf) else -d
