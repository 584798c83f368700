"""Brute-force joint enumeration for small networks.

This is the ground truth the message-passing engine is tested against, so
it deliberately shares no code with it: the tree geometry is recomputed
here from the configuration and the joint is a dense table with one axis
per variable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

from fgrn.blocks import Prior
from fgrn.errors import TooLarge, ZeroEvidenceMass
from fgrn.lvm import LvmBlock
from fgrn.quadtree import QuadtreeNetwork

MAX_ENTRIES = 10**7

Var = tuple[int, int, int]  # (layer, row, col)


@dataclass(eq=False)
class JointTable:
    table: np.ndarray
    variables: list[Var]

    def __post_init__(self):
        if self.table.ndim != len(self.variables):
            raise ValueError("one axis per variable is required")
        self._axis = {v: a for a, v in enumerate(self.variables)}

    def axis(self, var: Var) -> int:
        return self._axis[tuple(var)]


def _network_factors(net: QuadtreeNetwork):
    """Yield (variables, cardinalities, factor list) for a quadtree network."""
    cfg = net.config
    L, N, M = cfg.L, cfg.N, cfg.M
    cards = cfg.cardinalities
    variables: list[Var] = []
    sizes: list[int] = []
    for i in range(L, -1, -1):
        if i == 0:
            rows, cols = N * 2 ** (L - 1), M * 2 ** (L - 1)
        else:
            rows = cols = 2 ** (L - i)
        for r in range(rows):
            for c in range(cols):
                variables.append((i, r, c))
                sizes.append(cards[i])
    factors = [(((L, 0, 0),), np.asarray(net.layers[L - 1].prior))]
    for (i, r, c) in variables:
        if i == L:
            continue
        if i == 0:
            parent = (1, r // N, c // M)
            k = (r % N) * M + (c % M)
        else:
            parent = (i + 1, r // 2, c // 2)
            k = (r % 2) * 2 + (c % 2)
        theta = np.asarray(net.layers[parent[0] - 1].cpts[k])
        factors.append(((parent, (i, r, c)), theta))
    return variables, sizes, factors


def _block_factors(block: LvmBlock):
    n, m = block.shape
    variables: list[Var] = [(1, 0, 0)] + [(0, r, c) for r in range(n) for c in range(m)]
    sizes = [block.d_s] + [t.shape[1] for t in block.cpts]
    factors = [(((1, 0, 0),), np.asarray(block.prior))]
    for k, t in enumerate(block.cpts):
        factors.append((((1, 0, 0), (0, k // m, k % m)), np.asarray(t)))
    return variables, sizes, factors


def enumerate_joint(model: Union[QuadtreeNetwork, LvmBlock, Prior], max_entries: int = MAX_ENTRIES) -> JointTable:
    """Dense joint distribution: prior times every CPT entry along the tree.

    A bare :class:`Prior` is a lone source; its variable is ``(1, 0, 0)``.
    """
    if isinstance(model, Prior):
        pi = np.array(model.pi.values)
        if pi.size > max_entries:
            raise TooLarge(f"joint table would hold {pi.size} entries (limit {max_entries})")
        return JointTable(pi, [(1, 0, 0)])
    if isinstance(model, QuadtreeNetwork):
        variables, sizes, factors = _network_factors(model)
    elif isinstance(model, LvmBlock):
        variables, sizes, factors = _block_factors(model)
    else:
        raise TypeError(f"cannot enumerate {type(model).__name__}")
    total = math.prod(sizes)
    if total > max_entries:
        raise TooLarge(f"joint table would hold {total} entries (limit {max_entries})")
    axis = {v: a for a, v in enumerate(variables)}
    table = np.ones(sizes)
    ndim = len(sizes)
    for vars_, f in factors:
        shape = [1] * ndim
        for v, s in zip(vars_, f.shape):
            shape[axis[v]] = s
        table = table * f.reshape(shape)
    return JointTable(table, variables)


def _weighted(jt: JointTable, evidence: Mapping[Var, np.ndarray]) -> np.ndarray:
    t = jt.table
    for var, lik in evidence.items():
        lik = np.asarray(lik, dtype=np.float64)
        shape = [1] * t.ndim
        a = jt.axis(var)
        shape[a] = t.shape[a]
        t = t * lik.reshape(shape)
    return t


def oracle_posterior(jt: JointTable, evidence: Mapping[Var, np.ndarray] = None) -> dict[Var, np.ndarray]:
    """Per-variable marginals after weighting the joint by evidence likelihoods."""
    t = _weighted(jt, evidence or {})
    z = t.sum()
    if not z > 0:
        raise ZeroEvidenceMass("evidence has zero probability under the model")
    t = t / z
    out = {}
    for a, var in enumerate(jt.variables):
        others = tuple(x for x in range(t.ndim) if x != a)
        out[var] = t.sum(axis=others) if others else t.copy()
    return out


def oracle_log_likelihood(jt: JointTable, evidence: Mapping[Var, np.ndarray] = None) -> float:
    z = _weighted(jt, evidence or {}).sum()
    if not z > 0:
        raise ZeroEvidenceMass("evidence has zero probability under the model")
    return float(np.log(z))


def analytic_marginals(net: QuadtreeNetwork) -> list[np.ndarray]:
    """Prior marginal of every variable, composed down from the root.

    Returns one (rows, cols, d) array per layer, index 0 being the pixels.
    """
    cfg = net.config
    L, N, M = cfg.L, cfg.N, cfg.M
    out: list = [None] * (L + 1)
    out[L] = np.asarray(net.layers[L - 1].prior)[None, None, :].copy()
    for i in range(L, 0, -1):
        ph, pw = (N, M) if i == 1 else (2, 2)
        parent = out[i]
        rows, cols = parent.shape[:2]
        cpts = net.layers[i - 1].cpts
        child = np.zeros((rows * ph, cols * pw, cpts.shape[2]))
        for r in range(rows * ph):
            for c in range(cols * pw):
                k = (r % ph) * pw + (c % pw)
                child[r, c] = cpts[k].T @ parent[r // ph, c // pw]
        out[i - 1] = child
    return out
