"""Belief propagation on a trained quadtree and the four inference modes.

Every variable of the tree carries one forward message (arriving from its
parent SISO block, or from the source at the root) and one backward message
(leaving its diverter upward, or the evidence at a pixel).  A sweep lets each
LVM instance recompute, from the previous state, the backward message of its
latent variable and the forward messages of its children.

Two schedules give identical results on the tree:

* ``"flooding"``: synchronous sweeps, by default ``2L + 1`` of them.
* ``"two-pass"``: one upward pass then one downward pass (default).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from fgrn import kernels
from fgrn.errors import ContradictoryEvidence, IndexOutOfRange
from fgrn.messages import Message, normalize_last
from fgrn.quadtree import QuadtreeNetwork

Schedule = Literal["two-pass", "flooding"]


@dataclass(eq=False)
class Evidence:
    """Pixel likelihoods plus optional clamps on latent variables.

    ``pixels`` is (H, W, d0); unknown pixels hold a uniform vector.  ``kind``
    records what was set per pixel: 0 unknown, 1 observed, 2 soft.
    ``clamps`` maps ``(layer, row, col)`` to ``("forward" | "backward", state)``.

    A forward clamp replaces the message arriving from above, so the cone
    below sees a delta while the rest of the tree is unaffected.  A backward
    clamp is a hard observation of the latent variable and acts both upward
    and downward.
    """

    pixels: np.ndarray
    kind: np.ndarray
    clamps: dict = field(default_factory=dict)

    @classmethod
    def empty(cls, shape: tuple[int, int], d0: int) -> "Evidence":
        h, w = shape
        return cls(np.full((h, w, d0), 1.0 / d0), np.zeros((h, w), dtype=np.int8))

    @classmethod
    def for_network(cls, net: QuadtreeNetwork) -> "Evidence":
        return cls.empty(net.grid_shape(0), net.card(0))

    @classmethod
    def from_image(cls, image: np.ndarray, d0: int, mask: Optional[np.ndarray] = None) -> "Evidence":
        """Delta evidence at pixels where ``mask`` is true (all pixels if omitted)."""
        image = np.asarray(image)
        ev = cls.empty(image.shape, d0)
        known = np.ones(image.shape, bool) if mask is None else np.asarray(mask, bool)
        vals = image[known]
        if vals.size and (vals.min() < 0 or vals.max() >= d0):
            raise IndexOutOfRange(f"pixel symbol outside [0, {d0})")
        ev.pixels[known] = np.eye(d0)[vals]
        ev.kind[known] = 1
        return ev

    @classmethod
    def from_soft(cls, soft: np.ndarray) -> "Evidence":
        soft = np.asarray(soft, dtype=np.float64)
        if soft.ndim != 3:
            raise ValueError("soft evidence must be (H, W, d0)")
        norm, zero = normalize_last(soft)
        if np.any(zero) or np.any(soft < 0):
            raise ValueError("soft evidence must be nonnegative with positive mass at every pixel")
        kind = np.where(np.isclose(norm.max(axis=-1), 1.0), 1, 2).astype(np.int8)
        return cls(norm, kind)

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[:2]

    def set_pixel(self, r: int, c: int, value):
        """``int`` observes a symbol, a Message/array is soft evidence, ``None`` erases."""
        d = self.pixels.shape[-1]
        if value is None:
            self.pixels[r, c] = 1.0 / d
            self.kind[r, c] = 0
        elif isinstance(value, (int, np.integer)):
            if not 0 <= value < d:
                raise IndexOutOfRange(f"symbol {value} outside [0, {d})")
            self.pixels[r, c] = np.eye(d)[value]
            self.kind[r, c] = 1
        else:
            v = np.asarray(value.values if isinstance(value, Message) else value, dtype=np.float64)
            if v.shape != (d,):
                raise ValueError(f"soft evidence of length {v.size} for alphabet {d}")
            if np.any(v < 0) or not v.sum() > 0:
                raise ValueError("soft evidence must be nonnegative with positive mass")
            self.pixels[r, c] = v / v.sum()
            self.kind[r, c] = 2

    def clamp(self, layer: int, r: int, c: int, state: int, direction: str = "forward"):
        if direction not in ("forward", "backward"):
            raise ValueError("direction must be 'forward' or 'backward'")
        self.clamps[(layer, r, c)] = (direction, int(state))


@dataclass(eq=False)
class BeliefState:
    """Forward and backward messages on every variable, per layer (R, C, d)."""

    forward: list[np.ndarray]
    backward: list[np.ndarray]
    steps: int
    schedule: str

    def posterior(self, layer: int) -> np.ndarray:
        p, zero = normalize_last(self.forward[layer] * self.backward[layer])
        if np.any(zero):
            r, c = np.argwhere(zero)[0]
            raise ContradictoryEvidence(layer, int(r), int(c), "forward and backward messages disagree")
        return p

    def message(self, layer: int, r: int, c: int, direction: str = "forward") -> Message:
        src = self.forward if direction == "forward" else self.backward
        return Message(src[layer][r, c], direction)

    def max_change(self, other: "BeliefState") -> float:
        return max(
            float(np.max(np.abs(a - b)))
            for a, b in zip(self.forward + self.backward, other.forward + other.backward)
        )


class _Context:
    """Evidence laid out per layer for the sweep kernels."""

    def __init__(self, net: QuadtreeNetwork, evidence: Evidence):
        if evidence.shape != net.grid_shape(0) or evidence.pixels.shape[-1] != net.card(0):
            raise ValueError(
                f"evidence {evidence.pixels.shape} does not fit image {net.grid_shape(0)} x {net.card(0)}"
            )
        self.net = net
        self.pixels = evidence.pixels
        self.lik = [None] + [np.ones(net.grid_shape(i) + (net.card(i),)) for i in range(1, net.L + 1)]
        self.fmask = [None] + [np.zeros(net.grid_shape(i), bool) for i in range(1, net.L + 1)]
        self.fval = [None] + [np.zeros(net.grid_shape(i) + (net.card(i),)) for i in range(1, net.L + 1)]
        for (i, r, c), (direction, k) in evidence.clamps.items():
            if not 1 <= i <= net.L:
                raise IndexOutOfRange(f"layer {i} is not a latent layer (1..{net.L})")
            rows, cols = net.grid_shape(i)
            if not (0 <= r < rows and 0 <= c < cols):
                raise IndexOutOfRange(f"no variable at layer {i}, position ({r}, {c})")
            if not 0 <= k < net.card(i):
                raise IndexOutOfRange(f"state {k} outside [0, {net.card(i)}) at layer {i}")
            d = np.eye(net.card(i))[k]
            if direction == "forward":
                self.fmask[i][r, c] = True
                self.fval[i][r, c] = d
            else:
                self.lik[i][r, c] = self.lik[i][r, c] * d

    def clamp_forward(self, i: int, f: np.ndarray) -> np.ndarray:
        if i == 0 or not self.fmask[i].any():
            return f
        return np.where(self.fmask[i][..., None], self.fval[i], f)

    def initial(self) -> BeliefState:
        net = self.net
        fwd, bwd = [], []
        for i in range(net.L + 1):
            shape = net.grid_shape(i) + (net.card(i),)
            f = np.full(shape, 1.0 / net.card(i))
            if i == net.L:
                f = np.broadcast_to(net.params(i).prior, shape).copy()
            fwd.append(self.clamp_forward(i, f))
            if i == 0:
                bwd.append(self.pixels.copy())
            else:
                b, zero = normalize_last(np.full(shape, 1.0) * self.lik[i])
                _raise_if(zero, i)
                bwd.append(b)
        return BeliefState(fwd, bwd, 0, "")

    # -- per-layer pieces ------------------------------------------------------

    def ups(self, i: int, b_child: np.ndarray) -> np.ndarray:
        p = self.net.params(i)
        ups, zero = kernels.siso_backward(p.cpts, kernels.group(b_child, *p.patch))
        if np.any(zero):
            r, c, k = (int(v) for v in np.argwhere(zero)[0])
            ph, pw = p.patch
            raise ContradictoryEvidence(i - 1, r * ph + k // pw, c * pw + k % pw, "impossible under every parent state")
        return ups

    def backward(self, i: int, ups: np.ndarray) -> np.ndarray:
        prod, zero = kernels.branch_product(ups)
        _raise_if(zero, i, "children disagree")
        b, zero = normalize_last(prod * self.lik[i])
        _raise_if(zero, i, "children contradict the clamped state")
        return b

    def forward_children(self, i: int, f_parent: np.ndarray, ups: np.ndarray) -> np.ndarray:
        p = self.net.params(i)
        _, loo, _, zero = kernels.diverter_products(f_parent * self.lik[i], ups)
        if np.any(zero):
            r, c, _ = np.argwhere(zero)[0]
            raise ContradictoryEvidence(i, int(r), int(c), "evidence at the diverter is inconsistent")
        fc, zero = kernels.siso_forward(p.cpts, loo)
        if np.any(zero):
            r, c, k = (int(v) for v in np.argwhere(zero)[0])
            ph, pw = p.patch
            raise ContradictoryEvidence(i - 1, r * ph + k // pw, c * pw + k % pw)
        return self.clamp_forward(i - 1, kernels.ungroup(fc, *p.patch))


def _raise_if(zero: np.ndarray, layer: int, detail: str = ""):
    if np.any(zero):
        r, c = np.argwhere(zero)[0]
        raise ContradictoryEvidence(layer, int(r), int(c), detail)


def flood_step(ctx: _Context, state: BeliefState) -> BeliefState:
    """One synchronous sweep: every LVM instance reads only ``state``."""
    L = ctx.net.L
    fwd = list(state.forward)
    bwd = list(state.backward)
    for i in range(1, L + 1):
        ups = ctx.ups(i, state.backward[i - 1])
        bwd[i] = ctx.backward(i, ups)
        fwd[i - 1] = ctx.forward_children(i, state.forward[i], ups)
    return BeliefState(fwd, bwd, state.steps + 1, "flooding")


def two_pass(ctx: _Context, state: BeliefState) -> BeliefState:
    L = ctx.net.L
    fwd = list(state.forward)
    bwd = list(state.backward)
    ups = [None] * (L + 1)
    for i in range(1, L + 1):
        ups[i] = ctx.ups(i, bwd[i - 1])
        bwd[i] = ctx.backward(i, ups[i])
    for i in range(L, 0, -1):
        fwd[i - 1] = ctx.forward_children(i, fwd[i], ups[i])
    return BeliefState(fwd, bwd, 2, "two-pass")


def propagate(
    net: QuadtreeNetwork,
    evidence: Evidence,
    schedule: Schedule = "two-pass",
    steps: Optional[int] = None,
) -> BeliefState:
    """Run belief propagation from uniform non-evidence messages.

    With ``schedule="flooding"``, ``steps`` synchronous sweeps are executed
    (default ``2L + 1``, the diameter of the tree counted in variables).
    Raises :class:`ContradictoryEvidence` naming the first variable whose
    messages lose all mass.
    """
    ctx = _Context(net, evidence)
    state = ctx.initial()
    if schedule == "two-pass":
        if steps is not None:
            raise ValueError("steps only applies to the flooding schedule")
        return two_pass(ctx, state)
    if schedule != "flooding":
        raise ValueError(f"unknown schedule {schedule!r}")
    n = 2 * net.L + 1 if steps is None else steps
    for _ in range(n):
        state = flood_step(ctx, state)
    state.schedule = "flooding"
    return state


def flood_trace(net: QuadtreeNetwork, evidence: Evidence, steps: int) -> list[BeliefState]:
    """States after each of ``steps`` flooding sweeps (index 0 is the initial state)."""
    ctx = _Context(net, evidence)
    out = [ctx.initial()]
    for _ in range(steps):
        out.append(flood_step(ctx, out[-1]))
    return out


# -- inference modes ------------------------------------------------------------


def mode_generative(
    net: QuadtreeNetwork,
    layer: int,
    position: tuple[int, int] = (0, 0),
    state: int = 0,
    direction: str = "forward",
    schedule: Schedule = "two-pass",
) -> np.ndarray:
    """Forward messages on the pixel cone under ``S_layer[position]`` clamped to ``state``.

    Returns an (h, w, d0) array.  With ``direction="backward"`` the clamp is a
    backward delta instead, and the whole image is affected (use
    :func:`propagate` directly to read it).
    """
    if not 1 <= layer <= net.L:
        raise IndexOutOfRange(f"layer {layer} outside 1..{net.L}")
    if not 0 <= state < net.card(layer):
        raise IndexOutOfRange(f"state {state} outside [0, {net.card(layer)})")
    r, c = position
    ev = Evidence.for_network(net)
    ev.clamp(layer, r, c, state, direction)
    st = propagate(net, ev, schedule)
    h, w = net.cone_shape(layer)
    return st.forward[0][r * h:(r + 1) * h, c * w:(c + 1) * w].copy()


def mode_encode(net: QuadtreeNetwork, image: np.ndarray, schedule: Schedule = "two-pass") -> dict[int, np.ndarray]:
    """Posterior of every latent variable given a complete image, keyed by layer."""
    image = np.asarray(image)
    if image.shape != net.grid_shape(0):
        raise ValueError(f"image {image.shape} does not match network input {net.grid_shape(0)}")
    st = propagate(net, Evidence.from_image(image, net.card(0)), schedule)
    return {i: st.posterior(i) for i in range(1, net.L + 1)}


@dataclass(eq=False)
class Completion:
    """Result of pattern completion.

    ``decisions`` holds the argmax symbol at erased pixels and -1 at observed
    ones; ties break to the lowest symbol index.
    """

    forward: np.ndarray
    decisions: np.ndarray
    mask: np.ndarray
    tie_break: str = "lowest-index"

    def filled(self, image: np.ndarray) -> np.ndarray:
        return np.where(self.mask, image, self.decisions)


def mode_complete(
    net: QuadtreeNetwork, image: np.ndarray, mask: np.ndarray, schedule: Schedule = "two-pass"
) -> Completion:
    """Associative recall: ``mask`` is true where the pixel of ``image`` is known."""
    mask = np.asarray(mask, bool)
    if not mask.any():
        raise ValueError("pattern completion needs at least one observed pixel")
    st = propagate(net, Evidence.from_image(image, net.card(0), mask), schedule)
    fwd = st.forward[0]
    decisions = np.where(mask, -1, np.argmax(fwd, axis=-1))
    return Completion(fwd.copy(), decisions, mask)


def mode_correct(net: QuadtreeNetwork, soft: np.ndarray, schedule: Schedule = "two-pass") -> np.ndarray:
    """Per-pixel posteriors given soft (or delta) evidence at every pixel."""
    st = propagate(net, Evidence.from_soft(soft), schedule)
    return st.posterior(0)
