"""Discrete belief messages and their algebra.

A :class:`Message` is a nonnegative vector over a finite :class:`Alphabet`
carrying either forward or backward belief on a variable branch.  The
posterior of a variable is the normalized element-wise product of its
forward and backward messages (:func:`hadamard`).

Symbols are indexed from 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np

from fgrn.errors import AlphabetMismatch, IndexOutOfRange, ZeroMessage

Direction = Literal["forward", "backward"]

# products smaller than this are flushed to zero before normalizing
FLOOR = 1e-300


@dataclass(frozen=True)
class Alphabet:
    cardinality: int
    labels: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if int(self.cardinality) != self.cardinality or self.cardinality < 1:
            raise ValueError(f"cardinality must be a positive integer, got {self.cardinality!r}")
        if self.labels is not None:
            labels = tuple(str(s) for s in self.labels)
            if len(labels) != self.cardinality:
                raise ValueError(f"{len(labels)} labels for cardinality {self.cardinality}")
            if len(set(labels)) != len(labels):
                raise ValueError("alphabet labels must be distinct")
            object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.cardinality

    def compatible(self, other: "Alphabet") -> bool:
        if self.cardinality != other.cardinality:
            return False
        if self.labels is not None and other.labels is not None:
            return self.labels == other.labels
        return True


@dataclass(frozen=True, eq=False)
class Message:
    """Nonnegative belief vector; immutable after construction."""

    values: np.ndarray
    direction: Direction = "forward"
    alphabet: Alphabet = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64).reshape(-1)
        if v.size == 0:
            raise ValueError("a message needs at least one entry")
        if not np.all(np.isfinite(v)):
            raise ValueError("message entries must be finite")
        if np.any(v < 0):
            raise ValueError("message entries must be nonnegative")
        if not np.any(v > 0):
            raise ZeroMessage("all-zero message")
        if self.direction not in ("forward", "backward"):
            raise ValueError(f"direction must be 'forward' or 'backward', got {self.direction!r}")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        if self.alphabet is None:
            object.__setattr__(self, "alphabet", Alphabet(v.size))
        elif self.alphabet.cardinality != v.size:
            raise AlphabetMismatch(
                f"{v.size} values for an alphabet of cardinality {self.alphabet.cardinality}"
            )

    def __len__(self):
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __repr__(self):
        return f"Message({np.array2string(self.values, precision=6)}, {self.direction})"

    def with_direction(self, direction: Direction) -> "Message":
        return Message(self.values, direction, self.alphabet)

    def argmax(self) -> int:
        # np.argmax returns the first maximum, i.e. ties go to the lowest index
        return int(np.argmax(self.values))


def _check_same(a: Message, b: Message):
    if not a.alphabet.compatible(b.alphabet):
        raise AlphabetMismatch(f"alphabets differ: {a.alphabet} vs {b.alphabet}")


def _exact_unit_sum(v: np.ndarray) -> np.ndarray:
    # Push rounding residue into the largest entry so the (correctly rounded)
    # sum is exactly 1.0; makes normalize() idempotent bit-for-bit.
    for _ in range(4):
        r = 1.0 - math.fsum(v)
        if r == 0.0:
            break
        i = int(np.argmax(v))
        v[i] = v[i] + r
    return v


def normalize(m: Message) -> Message:
    """Scale ``m`` to sum to one, preserving its direction tag."""
    v = m.values
    s = math.fsum(v)
    if s == 1.0:
        return m
    if not s > 0:
        raise ZeroMessage("message sum underflows to zero")
    out = _exact_unit_sum(v / s)
    return Message(out, m.direction, m.alphabet)


def hadamard(a: Message, b: Message) -> Message:
    """Normalized element-wise product ``a ⊙ b``.

    With ``a`` forward and ``b`` backward on the same branch this is the
    variable's posterior.  The result keeps ``a``'s direction tag.
    """
    _check_same(a, b)
    p = a.values * b.values
    p[p < FLOOR] = 0.0
    if not np.any(p > 0):
        raise ZeroMessage("messages have disjoint supports")
    return normalize(Message(p, a.direction, a.alphabet))


def uniform(alphabet: Alphabet | int, direction: Direction = "forward") -> Message:
    if not isinstance(alphabet, Alphabet):
        alphabet = Alphabet(int(alphabet))
    d = alphabet.cardinality
    return normalize(Message(np.full(d, 1.0 / d), direction, alphabet))


def delta(alphabet: Alphabet | int, index: int, direction: Direction = "forward") -> Message:
    if not isinstance(alphabet, Alphabet):
        alphabet = Alphabet(int(alphabet))
    if not 0 <= index < alphabet.cardinality:
        raise IndexOutOfRange(f"symbol index {index} outside [0, {alphabet.cardinality})")
    v = np.zeros(alphabet.cardinality)
    v[index] = 1.0
    return Message(v, direction, alphabet)


def as_message(x, direction: Direction = "forward") -> Message:
    if isinstance(x, Message):
        return x
    return Message(np.asarray(x, dtype=np.float64), direction)


# -- array helpers used by the vectorized engine -----------------------------

def normalize_last(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normalize along the last axis.

    Returns ``(normalized, zero)`` where ``zero`` flags slices whose mass was
    zero; those slices are left at zero rather than filled with NaN.
    """
    a = np.where(a < FLOOR, 0.0, a)
    s = a.sum(axis=-1, keepdims=True)
    zero = s[..., 0] <= 0
    safe = np.where(s > 0, s, 1.0)
    return a / safe, zero


def stack_messages(msgs: Sequence[Message]) -> np.ndarray:
    return np.stack([np.asarray(m.values) for m in msgs])
