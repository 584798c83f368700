"""Localized maximum-likelihood learning for SISO and source blocks.

A SISO block sees only its own examples ``(f_X[n], b_Y[n])``: the forward
message arriving at its input and the backward message arriving at its
output.  :func:`learn_siso` maximizes ``sum_n log(f_X[n]^T theta b_Y[n])`` over
row-stochastic ``theta`` with a multiplicative fixed-point update.  A source
block is the special case of a one-row SISO block fed with ``f_X = [1]``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from fgrn.blocks import CptMatrix, Prior
from fgrn.errors import AlphabetMismatch, EmptyBatch
from fgrn.messages import Message

log = logging.getLogger(__name__)

NORM_TOL = 1e-8


class SkippedExamplesWarning(RuntimeWarning):
    """More than 1% of examples had a vanishing likelihood in some pass."""


@dataclass(frozen=True)
class LearnConfig:
    n_iterations: int = 10
    den_floor: float = 1e-12
    ftmp_floor: float = 1e-12

    def __post_init__(self):
        if int(self.n_iterations) != self.n_iterations or self.n_iterations < 1:
            raise ValueError("n_iterations must be a positive integer")
        for name in ("den_floor", "ftmp_floor"):
            v = getattr(self, name)
            if not 0 < v <= 1e-6:
                raise ValueError(f"{name} must lie in (0, 1e-6], got {v}")


@dataclass(frozen=True, eq=False)
class TrainingBatch:
    """``N_e`` example pairs stored as two arrays of shape (N_e, d_X) and (N_e, d_Y)."""

    f_x: np.ndarray
    b_y: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.f_x, dtype=np.float64)
        b = np.asarray(self.b_y, dtype=np.float64)
        if f.ndim != 2 or b.ndim != 2:
            raise ValueError("batch arrays must be 2-D (examples x symbols)")
        if f.shape[0] == 0 or b.shape[0] == 0:
            raise EmptyBatch("training batch is empty")
        if f.shape[0] != b.shape[0]:
            raise ValueError(f"{f.shape[0]} forward vs {b.shape[0]} backward examples")
        for name, a in (("forward", f), ("backward", b)):
            if np.any(a < 0) or np.any(np.abs(a.sum(axis=1) - 1.0) > NORM_TOL):
                raise ValueError(f"{name} messages must be normalized distributions")
        object.__setattr__(self, "f_x", f)
        object.__setattr__(self, "b_y", b)

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[Message, Message]]) -> "TrainingBatch":
        if len(pairs) == 0:
            raise EmptyBatch("training batch is empty")
        return cls(
            np.stack([np.asarray(f.values) for f, _ in pairs]),
            np.stack([np.asarray(b.values) for _, b in pairs]),
        )

    def __len__(self):
        return self.f_x.shape[0]

    @property
    def d_x(self) -> int:
        return self.f_x.shape[1]

    @property
    def d_y(self) -> int:
        return self.b_y.shape[1]


def jittered_uniform(d_in: int, d_out: int, rng: np.random.Generator, eps: float = 0.01) -> np.ndarray:
    """Uniform rows scaled entrywise by ``1 + eps*u``, ``u ~ U[-1, 1]``, then row-normalized."""
    t = np.full((d_in, d_out), 1.0 / d_out)
    if eps > 0:
        t = t * (1.0 + eps * rng.uniform(-1.0, 1.0, size=t.shape))
        t /= t.sum(axis=1, keepdims=True)
    return t


def _as_theta(init, d_x: int, d_y: int) -> np.ndarray:
    if init is None:
        return np.full((d_x, d_y), 1.0 / d_y)
    theta = init.theta if isinstance(init, CptMatrix) else CptMatrix(init).theta
    if theta.shape != (d_x, d_y):
        raise AlphabetMismatch(f"init shape {theta.shape} does not match batch ({d_x}, {d_y})")
    return np.array(theta)


def siso_pass(theta: np.ndarray, f: np.ndarray, b: np.ndarray, ftmp: np.ndarray, config: LearnConfig):
    """One pass of the multiplicative update; returns ``(theta, n_skipped)``."""
    den = np.einsum("ni,ni->n", f @ theta, b)
    keep = den >= config.den_floor
    n_skipped = int(keep.size - keep.sum())
    if n_skipped:
        f, b, den = f[keep], b[keep], den[keep]
    tmp = (f / den[:, None]).T @ b
    active = ftmp >= config.ftmp_floor
    new = theta.copy()
    new[active] = theta[active] / ftmp[active, None] * tmp[active]
    s = new.sum(axis=1, keepdims=True)
    # a row can lose all mass when every example touching it was skipped
    dead = s[:, 0] <= 0
    if np.any(dead):
        new[dead] = theta[dead]
        s[dead] = new[dead].sum(axis=1, keepdims=True)
    return new / s, n_skipped


def learn_siso(
    batch: TrainingBatch,
    config: LearnConfig = LearnConfig(),
    init: Optional[CptMatrix | np.ndarray] = None,
) -> CptMatrix:
    """Fit a SISO block's row-stochastic matrix to local message examples.

    Runs exactly ``config.n_iterations`` passes starting from ``init``
    (uniform rows when omitted).  Rows whose accumulated forward mass is below
    ``ftmp_floor`` keep their current values; examples whose likelihood
    ``f^T theta b`` is below ``den_floor`` are skipped for that pass.
    """
    if len(batch) == 0:
        raise EmptyBatch("training batch is empty")
    f, b = batch.f_x, batch.b_y
    theta = _as_theta(init, batch.d_x, batch.d_y)
    ftmp = f.sum(axis=0)
    worst = 0
    for _ in range(config.n_iterations):
        theta, skipped = siso_pass(theta, f, b, ftmp, config)
        worst = max(worst, skipped)
    if worst > 0.01 * len(batch):
        warnings.warn(
            f"{worst} of {len(batch)} examples skipped (likelihood below {config.den_floor})",
            SkippedExamplesWarning,
            stacklevel=2,
        )
    elif worst:
        log.debug("skipped %d of %d examples", worst, len(batch))
    return CptMatrix(theta)


def batch_log_likelihood(batch: TrainingBatch, theta: CptMatrix | np.ndarray, den_floor: float = 1e-12) -> float:
    t = theta.theta if isinstance(theta, CptMatrix) else np.asarray(theta)
    den = np.einsum("ni,ni->n", batch.f_x @ t, batch.b_y)
    return float(np.sum(np.log(np.maximum(den, den_floor))))


def learn_source(
    batch: Sequence[Message] | np.ndarray,
    config: LearnConfig = LearnConfig(),
    init: Optional[Prior | np.ndarray] = None,
) -> Prior:
    """Fit a source prior to backward messages seen at its output."""
    if isinstance(batch, np.ndarray):
        b = np.asarray(batch, dtype=np.float64)
    else:
        if len(batch) == 0:
            raise EmptyBatch("training batch is empty")
        b = np.stack([np.asarray(m.values) for m in batch])
    if b.ndim != 2 or b.shape[0] == 0:
        raise EmptyBatch("training batch is empty")
    if isinstance(init, Prior):
        init = init.pi.values
    init_row = None if init is None else np.asarray(init, dtype=np.float64).reshape(1, -1)
    cpt = learn_siso(TrainingBatch(np.ones((b.shape[0], 1)), b), config, init_row)
    return Prior(Message(cpt.theta[0]))
