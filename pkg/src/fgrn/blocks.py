"""The three reduced-normal-form primitives: SISO block, diverter, source.

Each function computes the outgoing messages of one block from its incoming
messages (sum-product rules in vector form).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from fgrn.errors import AlphabetMismatch, ZeroMessage
from fgrn.messages import FLOOR, Alphabet, Message, hadamard, normalize

ROW_TOL = 1e-10
# own factors with an entry below this use the direct leave-one-out product
DIVIDE_MIN = 1e-12


@dataclass(frozen=True, eq=False)
class CptMatrix:
    """Row-stochastic ``P(Y|X)``: rows index the input X, columns the output Y."""

    theta: np.ndarray
    rows: Alphabet = None  # type: ignore[assignment]
    cols: Alphabet = None  # type: ignore[assignment]

    def __post_init__(self):
        t = np.array(self.theta, dtype=np.float64)
        if t.ndim != 2:
            raise ValueError(f"theta must be 2-D, got shape {t.shape}")
        check_row_stochastic(t)
        t.flags.writeable = False
        object.__setattr__(self, "theta", t)
        if self.rows is None:
            object.__setattr__(self, "rows", Alphabet(t.shape[0]))
        if self.cols is None:
            object.__setattr__(self, "cols", Alphabet(t.shape[1]))
        if (self.rows.cardinality, self.cols.cardinality) != t.shape:
            raise AlphabetMismatch(f"alphabets {self.rows}, {self.cols} do not fit shape {t.shape}")

    @classmethod
    def uniform(cls, d_in: int, d_out: int) -> "CptMatrix":
        return cls(np.full((d_in, d_out), 1.0 / d_out))

    @classmethod
    def identity(cls, d: int) -> "CptMatrix":
        return cls(np.eye(d))

    @property
    def shape(self):
        return self.theta.shape


def check_row_stochastic(t: np.ndarray, tol: float = ROW_TOL):
    if np.any(t < 0) or np.any(t > 1):
        raise ValueError("CPT entries must lie in [0, 1]")
    err = np.abs(t.sum(axis=-1) - 1.0)
    if np.any(err > tol):
        raise ValueError(f"CPT rows must sum to 1 (max deviation {err.max():.3g})")


@dataclass(frozen=True, eq=False)
class Prior:
    pi: Message

    def __post_init__(self):
        pi = self.pi if isinstance(self.pi, Message) else Message(self.pi)
        if abs(pi.values.sum() - 1.0) > 1e-12:
            raise ValueError("prior must sum to 1")
        object.__setattr__(self, "pi", pi.with_direction("forward"))

    @classmethod
    def uniform(cls, d: int) -> "Prior":
        return cls(Message(np.full(d, 1.0 / d)))


@dataclass(frozen=True)
class Diverter:
    """Equality constraint replicating one variable onto ``replica_count`` branches."""

    alphabet: Alphabet
    replica_count: int

    def __post_init__(self):
        if self.replica_count < 1:
            raise ValueError("a diverter needs at least one replica")


def siso_forward(cpt: CptMatrix, f_x: Message) -> Message:
    """``f_Y ∝ θᵀ f_X``."""
    if not cpt.rows.compatible(f_x.alphabet):
        raise AlphabetMismatch(f"forward message over {f_x.alphabet}, block input is {cpt.rows}")
    out = cpt.theta.T @ f_x.values
    return _normalized(out, "forward", cpt.cols)


def siso_backward(cpt: CptMatrix, b_y: Message) -> Message:
    """``b_X ∝ θ b_Y``."""
    if not cpt.cols.compatible(b_y.alphabet):
        raise AlphabetMismatch(f"backward message over {b_y.alphabet}, block output is {cpt.cols}")
    out = cpt.theta @ b_y.values
    return _normalized(out, "backward", cpt.rows)


def _normalized(v: np.ndarray, direction, alphabet) -> Message:
    v = np.where(v < FLOOR, 0.0, v)
    if not np.any(v > 0):
        raise ZeroMessage("block output has no mass")
    return normalize(Message(v, direction, alphabet))


def _product(msgs: Sequence[np.ndarray], d: int) -> np.ndarray:
    acc = np.ones(d)
    for v in msgs:
        acc = acc * v
        s = acc.sum()
        if s > 0:
            acc = acc / s
    return acc


def diverter_update(
    div: Diverter, f_in: Message, b_replicas: Sequence[Message]
) -> tuple[Message, list[Message]]:
    """Outgoing messages of a diverter.

    Returns ``(b_out, f_replicas)``: the backward message sent up the incoming
    branch, and one forward message per replica branch (the product of every
    incoming message except that branch's own backward).
    """
    if len(b_replicas) != div.replica_count:
        raise ValueError(f"expected {div.replica_count} replica messages, got {len(b_replicas)}")
    for m in (f_in, *b_replicas):
        if not div.alphabet.compatible(m.alphabet):
            raise AlphabetMismatch(f"message over {m.alphabet} on a diverter over {div.alphabet}")
    d = div.alphabet.cardinality
    bs = [m.values for m in b_replicas]

    b_prod = _product(bs, d)
    b_prod = np.where(b_prod < FLOOR, 0.0, b_prod)
    if not np.any(b_prod > 0):
        raise ZeroMessage("replica backward messages have disjoint supports")
    b_out = normalize(Message(b_prod, "backward", div.alphabet))

    total = b_prod * f_in.values
    total = total / total.sum() if total.sum() > 0 else total
    f_out = []
    for k, own in enumerate(bs):
        if own.min() >= DIVIDE_MIN:
            v = total / own
        else:
            v = f_in.values * _product(bs[:k] + bs[k + 1:], d)
        f_out.append(_normalized(v, "forward", div.alphabet))
    return b_out, f_out


def source_forward(p: Prior) -> Message:
    return p.pi


def source_posterior(p: Prior, b: Message) -> Message:
    return hadamard(p.pi, b)
