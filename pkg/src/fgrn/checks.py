"""Randomized exactness checks of the engine against the brute-force oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from fgrn.errors import ContradictoryEvidence, ZeroEvidenceMass
from fgrn.inference import Evidence, flood_trace, propagate
from fgrn.oracle import MAX_ENTRIES, enumerate_joint, oracle_posterior
from fgrn.quadtree import ArchitectureConfig, LayerParams, QuadtreeNetwork


def _table_size(cfg: ArchitectureConfig) -> tuple[int, int]:
    n_vars, size = 0, 1
    for i in range(cfg.L + 1):
        if i == 0:
            count = cfg.N * cfg.M * 4 ** (cfg.L - 1)
        else:
            count = 4 ** (cfg.L - i)
        n_vars += count
        size *= cfg.cardinalities[i] ** count
    return n_vars, size


def random_network(
    rng: np.random.Generator,
    max_vars: int = 30,
    max_card: int = 3,
    max_entries: int = 200_000,
    sparsity: float = 0.0,
) -> QuadtreeNetwork:
    """A random quadtree small enough to enumerate.

    CPT rows are Dirichlet(1) draws; with ``sparsity > 0`` that fraction of
    entries is zeroed (keeping every row nonzero) to exercise exact zeros.
    """
    for _ in range(1000):
        L = int(rng.integers(1, 3))
        N, M = (int(x) for x in rng.integers(1, 4, size=2))
        cards = tuple(int(x) for x in rng.integers(1, max_card + 1, size=L + 1))
        cfg = ArchitectureConfig(L, N, M, cards)
        n_vars, size = _table_size(cfg)
        if n_vars <= max_vars and size <= max_entries:
            break
    else:  # pragma: no cover
        raise RuntimeError("could not draw a small enough network")
    layers = []
    for i in range(1, L + 1):
        patch = (N, M) if i == 1 else (2, 2)
        k = patch[0] * patch[1]
        cpts = rng.dirichlet(np.ones(cards[i - 1]), size=(k, cards[i]))
        if sparsity > 0 and cards[i - 1] > 1:
            drop = rng.random(cpts.shape) < sparsity
            drop[..., 0] &= ~drop[..., 1:].all(axis=-1)
            cpts = np.where(drop, 0.0, cpts)
            cpts /= cpts.sum(axis=-1, keepdims=True)
        prior = rng.dirichlet(np.ones(cards[i]))
        layers.append(LayerParams(cpts, prior, patch))
    return QuadtreeNetwork(cfg, layers)


def random_evidence(rng: np.random.Generator, net: QuadtreeNetwork, latent_rate: float = 0.1) -> Evidence:
    """Each pixel is independently observed, soft, or absent; a few latents get a backward delta."""
    ev = Evidence.for_network(net)
    h, w = net.grid_shape(0)
    d0 = net.card(0)
    for r in range(h):
        for c in range(w):
            u = rng.random()
            if u < 1 / 3:
                ev.set_pixel(r, c, int(rng.integers(d0)))
            elif u < 2 / 3:
                ev.set_pixel(r, c, rng.dirichlet(np.ones(d0)) + 1e-3)
    for i in range(1, net.L + 1):
        rows, cols = net.grid_shape(i)
        for r in range(rows):
            for c in range(cols):
                if rng.random() < latent_rate:
                    ev.clamp(i, r, c, int(rng.integers(net.card(i))), "backward")
    return ev


def oracle_evidence(net: QuadtreeNetwork, evidence: Evidence) -> dict:
    """Express engine evidence as per-variable likelihood vectors for the oracle."""
    out = {}
    h, w = evidence.shape
    for r in range(h):
        for c in range(w):
            out[(0, r, c)] = evidence.pixels[r, c]
    for (i, r, c), (direction, k) in evidence.clamps.items():
        if direction != "backward":
            raise ValueError("forward clamps cut the tree and have no joint-conditioning equivalent")
        lik = np.zeros(net.card(i))
        lik[k] = 1.0
        out[(i, r, c)] = out.get((i, r, c), 1.0) * lik
    return out


@dataclass
class TrialResult:
    posterior_error: float  # worst entry, flooding and two-pass vs oracle
    diameter_change: float  # worst message change between sweep 2L+1 and 2L+2
    schedule_gap: float  # worst message difference between the two schedules
    n_variables: int
    skipped: bool = False  # evidence had zero probability


def exactness_trial(net: QuadtreeNetwork, evidence: Evidence) -> TrialResult:
    jt = enumerate_joint(net, MAX_ENTRIES)
    try:
        truth = oracle_posterior(jt, oracle_evidence(net, evidence))
    except ZeroEvidenceMass:
        try:
            propagate(net, evidence)
        except ContradictoryEvidence:
            return TrialResult(0.0, 0.0, 0.0, net.n_variables, skipped=True)
        raise AssertionError("engine accepted evidence the oracle finds impossible")
    L = net.L
    trace = flood_trace(net, evidence, 2 * L + 2)
    flood = trace[2 * L + 1]
    two = propagate(net, evidence, "two-pass")
    err = 0.0
    for state in (flood, two):
        posts = [state.posterior(i) for i in range(L + 1)]
        for (i, r, c), p in truth.items():
            err = max(err, float(np.max(np.abs(posts[i][r, c] - p))))
    return TrialResult(
        posterior_error=err,
        diameter_change=trace[2 * L + 2].max_change(flood),
        schedule_gap=flood.max_change(two),
        n_variables=net.n_variables,
    )


def exactness_suite(
    trials: int = 100,
    seed: int = 0,
    max_vars: int = 30,
    max_card: int = 3,
    net: Optional[QuadtreeNetwork] = None,
) -> list[TrialResult]:
    """Run ``trials`` random trials; on ``net`` if given, else on fresh random networks."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(trials):
        model = net if net is not None else random_network(rng, max_vars, max_card)
        out.append(exactness_trial(model, random_evidence(rng, model)))
    return out


def fits_oracle(net: QuadtreeNetwork, max_vars: int) -> bool:
    n_vars, size = _table_size(net.config)
    return n_vars <= max_vars and size <= MAX_ENTRIES and math.isfinite(size)
