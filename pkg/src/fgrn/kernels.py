"""Vectorized message kernels over arbitrary leading batch axes.

Shapes use ``K`` for the number of diverter branches (children) and ``d``
for alphabet sizes.  Every kernel returns normalized messages plus a
boolean mask marking slices that lost all mass, so callers can report
where a contradiction happened.
"""

from __future__ import annotations

import numpy as np

from fgrn.messages import normalize_last


def group(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    """(..., R*ph, C*pw, d) -> (..., R, C, ph*pw, d), children row-major within a patch."""
    *lead, h, w, d = x.shape
    r, c = h // ph, w // pw
    x = x.reshape(*lead, r, ph, c, pw, d)
    x = np.swapaxes(x, -4, -3)
    return x.reshape(*lead, r, c, ph * pw, d)


def ungroup(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    """Inverse of :func:`group`."""
    *lead, r, c, k, d = x.shape
    x = x.reshape(*lead, r, c, ph, pw, d)
    x = np.swapaxes(x, -4, -3)
    return x.reshape(*lead, r * ph, c * pw, d)


def siso_backward(cpts: np.ndarray, b: np.ndarray):
    """``theta_k b_k`` for stacked CPTs (K, dp, dc) and messages (..., K, dc)."""
    return normalize_last(np.einsum("kpc,...kc->...kp", cpts, b))


def siso_forward(cpts: np.ndarray, f: np.ndarray):
    """``theta_k^T f_k`` for stacked CPTs (K, dp, dc) and messages (..., K, dp)."""
    return normalize_last(np.einsum("kpc,...kp->...kc", cpts, f))


def diverter_products(f_in: np.ndarray, ups: np.ndarray):
    """Outgoing products of a diverter with K replica branches.

    ``f_in`` is (..., d) and ``ups`` (..., K, d).  Returns
    ``(b_out, f_rep, b_zero, f_zero)`` where ``b_out`` is the product of all
    branch messages and ``f_rep[..., k, :]`` is ``f_in`` times every branch
    message except ``k``.  Prefix/suffix products avoid dividing by a branch's
    own message, so zeros are handled exactly.
    """
    k = ups.shape[-2]
    lead = ups.shape[:-2]
    d = ups.shape[-1]
    pre = np.ones(lead + (k + 1, d))
    suf = np.ones(lead + (k + 1, d))
    for j in range(k):
        pre[..., j + 1, :], _ = normalize_last(pre[..., j, :] * ups[..., j, :])
        i = k - j - 1
        suf[..., i, :], _ = normalize_last(suf[..., i + 1, :] * ups[..., i, :])
    b_out, b_zero = normalize_last(pre[..., k, :])
    f_rep, f_zero = normalize_last(f_in[..., None, :] * pre[..., :k, :] * suf[..., 1:, :])
    return b_out, f_rep, b_zero, f_zero


def branch_product(ups: np.ndarray):
    """Normalized product over the branch axis of (..., K, d)."""
    acc = ups[..., 0, :]
    zero = np.zeros(acc.shape[:-1], dtype=bool)
    for j in range(1, ups.shape[-2]):
        acc, zero = normalize_last(acc * ups[..., j, :])
    if ups.shape[-2] == 1:
        acc, zero = normalize_last(acc)
    return acc, zero
