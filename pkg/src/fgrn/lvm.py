"""Latent variable model: one source S, one diverter, N*M SISO blocks.

The block is a mixture of categorical distributions over an N x M grid of
child variables.  Child positions are flattened row-major (``k = n*M + m``)
wherever a flat index is used.
"""

from __future__ import annotations

import warnings

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from fgrn import kernels
from fgrn.blocks import CptMatrix, Prior, check_row_stochastic
from fgrn.errors import AlphabetMismatch, EmptyBatch, ZeroMessage
from fgrn.learning import LearnConfig, SkippedExamplesWarning, TrainingBatch, jittered_uniform, learn_siso, learn_source
from fgrn.messages import Message, normalize_last


@dataclass(eq=False)
class LvmBlock:
    """Parameters of one latent variable model.

    ``cpts[k]`` has shape ``(d_S, d_X[k])``.  Arrays are held by reference, so
    blocks built from a shared parameter set see each other's updates.
    """

    prior: np.ndarray
    cpts: list[np.ndarray]
    shape: tuple[int, int]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        n, m = self.shape
        if n < 1 or m < 1:
            raise ValueError(f"invalid child grid shape {self.shape}")
        if len(self.cpts) != n * m:
            raise ValueError(f"{len(self.cpts)} CPTs for a {n}x{m} grid")
        if abs(float(np.sum(self.prior)) - 1.0) > 1e-12 or np.any(self.prior < 0):
            raise ValueError("prior must be a distribution")
        for t in self.cpts:
            if t.ndim != 2 or t.shape[0] != self.d_s:
                raise AlphabetMismatch(f"CPT shape {t.shape} does not match d_S={self.d_s}")
            check_row_stochastic(t)

    @classmethod
    def uniform(cls, d_s: int, shape: tuple[int, int], child_cards: Sequence[int] | int) -> "LvmBlock":
        k = shape[0] * shape[1]
        cards = [child_cards] * k if isinstance(child_cards, int) else list(child_cards)
        return cls(np.full(d_s, 1.0 / d_s), [np.full((d_s, d), 1.0 / d) for d in cards], tuple(shape))

    @property
    def d_s(self) -> int:
        return int(np.shape(self.prior)[0])

    @property
    def n_children(self) -> int:
        return len(self.cpts)

    @property
    def child_cards(self) -> list[int]:
        return [t.shape[1] for t in self.cpts]

    def cpt(self, n: int, m: int) -> CptMatrix:
        return CptMatrix(self.cpts[n * self.shape[1] + m])

    def source(self) -> Prior:
        return Prior(Message(self.prior))


# -- batched kernels ----------------------------------------------------------
# ``b_children`` is a list of K arrays shaped (E, d_X[k]); E is an example axis.


def upward_messages(cpts: Sequence[np.ndarray], b_children: Sequence[np.ndarray], strict: bool = True):
    """Per-branch backward messages at the diverter, shape (E, K, d_S).

    With ``strict=False`` nothing is raised and ``(ups, zero)`` is returned,
    ``zero`` (E, K) marking branches whose evidence no latent state explains.
    """
    ups, zeros = [], []
    for k, (t, b) in enumerate(zip(cpts, b_children)):
        u, zero = normalize_last(b @ t.T)
        if strict and np.any(zero):
            raise ZeroMessage(f"child {k}: evidence has zero probability under every latent state")
        ups.append(u)
        zeros.append(zero)
    if strict:
        return np.stack(ups, axis=1)
    return np.stack(ups, axis=1), np.stack(zeros, axis=1)


def combine(f_s: np.ndarray, ups: np.ndarray):
    """Diverter products for a batch: ``(b_up, loo, b_zero, loo_zero)``."""
    return kernels.diverter_products(f_s, ups)


def _grid_to_list(block: LvmBlock, b_children) -> list[np.ndarray]:
    n, m = block.shape
    if len(b_children) != n or any(len(row) != m for row in b_children):
        raise ValueError(f"expected a {n}x{m} grid of messages")
    out = []
    for k, cell in enumerate(x for row in b_children for x in row):
        v = np.asarray(cell.values if isinstance(cell, Message) else cell, dtype=np.float64)
        if v.shape != (block.cpts[k].shape[1],):
            raise AlphabetMismatch(f"child {k}: message of length {v.size}, alphabet {block.cpts[k].shape[1]}")
        out.append(v[None, :])
    return out


def _msg(v: np.ndarray, direction) -> Message:
    return Message(v, direction)


def lvm_upward(block: LvmBlock, b_children, f_parent: Optional[Message] = None) -> tuple[Message, Message]:
    """Backward message leaving S upward, and the posterior of S."""
    bs = _grid_to_list(block, b_children)
    ups = upward_messages(block.cpts, bs)
    f_s = np.asarray(f_parent.values if f_parent is not None else block.prior)[None, :]
    b_up, _, b_zero, _ = combine(f_s, ups)
    if b_zero[0]:
        raise ZeroMessage("children evidence is contradictory")
    post, zero = normalize_last(f_s[0] * b_up[0])
    if zero:
        raise ZeroMessage("evidence contradicts the latent forward message")
    return _msg(b_up[0], "backward"), _msg(post, "forward")


def lvm_downward(block: LvmBlock, f_s_effective: Message, b_children) -> list[list[Message]]:
    """Forward messages arriving at every child, as an N x M grid."""
    bs = _grid_to_list(block, b_children)
    ups = upward_messages(block.cpts, bs)
    f_s = np.asarray(f_s_effective.values)[None, :]
    _, loo, _, loo_zero = combine(f_s, ups)
    if np.any(loo_zero):
        raise ZeroMessage("contradictory evidence at the diverter")
    n, m = block.shape
    out = []
    for r in range(n):
        row = []
        for c in range(m):
            k = r * m + c
            v, zero = normalize_last(loo[0, k] @ block.cpts[k])
            if zero:
                raise ZeroMessage(f"child ({r}, {c}) receives a zero forward message")
            row.append(_msg(v, "forward"))
        out.append(row)
    return out


def _examples_to_columns(examples, shape) -> tuple[list[np.ndarray], tuple[int, int]]:
    if isinstance(examples, np.ndarray):
        if examples.ndim != 4:
            raise ValueError("array examples must have shape (E, N, M, d)")
        e, n, m, d = examples.shape
        if e == 0:
            raise EmptyBatch("no training examples")
        flat = examples.reshape(e, n * m, d).astype(np.float64, copy=False)
        return [flat[:, k] for k in range(n * m)], (n, m)
    cols = [np.asarray(c, dtype=np.float64) for c in examples]
    if not cols or cols[0].shape[0] == 0:
        raise EmptyBatch("no training examples")
    if shape is None:
        raise ValueError("shape is required when examples are given per position")
    if len(cols) != shape[0] * shape[1]:
        raise ValueError(f"{len(cols)} columns for grid {shape}")
    if len({c.shape[0] for c in cols}) != 1:
        raise ValueError("every position needs the same number of examples")
    return cols, tuple(shape)


def lvm_epoch(block: LvmBlock, cols: Sequence[np.ndarray], config: LearnConfig) -> LvmBlock:
    """One Jacobi sweep: messages from the current parameters, then every block learns."""
    ups, up_zero = upward_messages(block.cpts, cols, strict=False)
    e = ups.shape[0]
    f_s = np.broadcast_to(block.prior, (e, block.d_s))
    b_up, loo, b_zero, loo_zero = combine(f_s, ups)
    keep = ~(b_zero | loo_zero.any(axis=-1) | up_zero.any(axis=-1))
    if not keep.any():
        raise ZeroMessage("every training example is impossible under the current parameters")
    if not keep.all():
        # an example that lost all mass carries no gradient; drop it for this sweep
        warnings.warn(
            f"{int((~keep).sum())} of {e} examples impossible under the current parameters",
            SkippedExamplesWarning,
            stacklevel=2,
        )
        b_up, loo, cols = b_up[keep], loo[keep], [c[keep] for c in cols]
    cpts = [
        learn_siso(TrainingBatch(loo[:, k], cols[k]), config, init=block.cpts[k]).theta.copy()
        for k in range(len(cols))
    ]
    prior = learn_source(b_up, config, init=block.prior).pi.values.copy()
    return LvmBlock(prior, cpts, block.shape, dict(block.metadata))


def _mix(rows: np.ndarray, s: float) -> np.ndarray:
    out = (1.0 - s) * rows + s / rows.shape[-1]
    return out / out.sum(axis=-1, keepdims=True)


def smooth(block: LvmBlock, s: float) -> LvmBlock:
    """Mix the prior and every CPT row with uniform at weight ``s``."""
    return LvmBlock(_mix(block.prior, s), [_mix(t, s) for t in block.cpts], block.shape, dict(block.metadata))


def lvm_train(
    examples,
    d_s: int,
    config: LearnConfig = LearnConfig(),
    epochs: int = 10,
    *,
    shape: Optional[tuple[int, int]] = None,
    seed: int = 0,
    jitter: float = 0.01,
    init: Optional[LvmBlock] = None,
    smoothing: float = 0.0,
) -> LvmBlock:
    """Train an LVM on child backward-message examples.

    ``examples`` is either an array of shape (E, N, M, d) or a list of N*M
    per-position arrays of shape (E, d_k) (for heterogeneous alphabets, in
    which case ``shape`` must be given).  Each example is a grid of backward
    messages at the children, typically deltas.  CPTs start from uniform rows
    with seeded multiplicative jitter; the prior starts uniform.

    Maximum likelihood leaves exact zeros for configurations never seen in
    training.  ``smoothing`` mixes every trained row with the uniform
    distribution, ``(1 - s) * theta + s / d``, once after the last epoch so
    that unseen inputs keep nonzero probability.  The default of 0 returns
    the unmodified estimate.
    """
    if epochs < 1:
        raise ValueError("epochs must be positive")
    if not 0.0 <= smoothing < 1.0:
        raise ValueError("smoothing must lie in [0, 1)")
    cols, shape = _examples_to_columns(examples, shape)
    if init is None:
        rng = np.random.default_rng(seed)
        block = LvmBlock(
            np.full(d_s, 1.0 / d_s),
            [jittered_uniform(d_s, c.shape[1], rng, jitter) for c in cols],
            shape,
        )
    else:
        block = init
    for _ in range(epochs):
        block = lvm_epoch(block, cols, config)
    if smoothing > 0:
        block = smooth(block, smoothing)
    block.metadata.update(
        epochs=epochs, seed=seed, jitter=jitter, n_iterations=config.n_iterations,
        den_floor=config.den_floor, ftmp_floor=config.ftmp_floor, smoothing=smoothing,
    )
    return block
