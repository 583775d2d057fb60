"""Pure numpy implementations of the per-batch kernels.

Every function takes float64 C-contiguous 2-D arrays (rows are samples) and
mirrors ``_kernels.pyx`` exactly in semantics. Inputs are assumed validated by
the caller.
"""

from __future__ import annotations

import numpy as np

KL_FLOOR = 1e-12
NORM_FLOOR = 1e-12

COSINE, INV_L1, INV_L2 = 0, 1, 2


def softmax_rows(z):
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def row_kl(p, q):
    """Per-row KL(p || q) with 0*ln(0/q) = 0 and q floored at KL_FLOOR."""
    qf = np.maximum(q, KL_FLOOR)
    pos = p > 0
    terms = np.zeros_like(p)
    terms[pos] = p[pos] * (np.log(p[pos]) - np.log(qf[pos]))
    return terms.sum(axis=1)


def cross_entropy(z, labels):
    n = z.shape[0]
    probs = softmax_rows(z)
    rows = np.arange(n)
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_norm - shifted[rows, labels]))
    grad = probs
    grad[rows, labels] -= 1.0
    grad /= n
    return loss, grad


def mutual_scores(t, s, kind, eps):
    if kind == COSINE:
        nt = np.sqrt((t * t).sum(axis=1))
        ns = np.sqrt((s * s).sum(axis=1))
        dots = (t * s).sum(axis=1)
        ok = (nt >= NORM_FLOOR) & (ns >= NORM_FLOOR)
        out = np.zeros(t.shape[0])
        out[ok] = dots[ok] / (nt[ok] * ns[ok])
        return out
    diff = t - s
    if kind == INV_L1:
        dist = np.abs(diff).sum(axis=1)
    else:
        dist = np.sqrt((diff * diff).sum(axis=1))
    return 1.0 / (dist + eps)


def masked_kl(t, s, mask):
    """Sum of KL(softmax(t_i) || softmax(s_i)) over masked rows, and its
    gradient with respect to ``s`` (teacher held constant)."""
    pt = softmax_rows(t)
    ps = softmax_rows(s)
    keep = mask.astype(bool)
    loss = float(row_kl(pt[keep], ps[keep]).sum()) if keep.any() else 0.0
    grad = np.zeros_like(s)
    grad[keep] = ps[keep] - pt[keep]
    return loss, grad
