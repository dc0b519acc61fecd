"""Debiasing objectives built on variant questions: contrastive loss and feature mixing."""
from __future__ import annotations

import numpy as np

from .exceptions import BatchError, ModelError, SimError

METHODS = ("none", "contrastive", "mixing")


def cosine_sim(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        raise SimError("cosine similarity of a zero vector")
    return float(np.clip(x @ y / (nx * ny), -1.0, 1.0))


def _unit_rows(h):
    norms = np.linalg.norm(h, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise SimError("cosine similarity of a zero vector")
    return h / norms, norms


def contrastive_loss(anchors, positives):
    """In-batch contrastive loss with variant-question positives.

    For anchor i the positive is ``positives[i]`` and the negatives are all
    other anchors j != i.  Similarities are cosines, with no temperature:

        L = -1/N sum_i log( e^{s(h_i, p_i)} / (e^{s(h_i, p_i)} + sum_{j!=i} e^{s(h_i, h_j)}) )

    Returns (loss, dL/danchors, dL/dpositives).
    """
    h = np.asarray(anchors, dtype=np.float64)
    hp = np.asarray(positives, dtype=np.float64)
    if h.ndim != 2 or h.shape != hp.shape:
        raise BatchError(f"anchors {h.shape} and positives {hp.shape} must be aligned 2-D arrays")
    n = len(h)
    if n < 2:
        raise BatchError("contrastive loss needs at least two samples (one negative)")
    u, nu = _unit_rows(h)
    up, nup = _unit_rows(hp)
    neg = u @ u.T
    pos = np.sum(u * up, axis=1)
    logits = neg.copy()
    np.fill_diagonal(logits, pos)          # column i of row i holds the positive
    m = logits.max(axis=1, keepdims=True)
    w = np.exp(logits - m)
    lse = np.log(w.sum(axis=1)) + m[:, 0]
    loss = float(np.mean(lse - pos))
    w /= w.sum(axis=1, keepdims=True)

    g_neg = w / n
    np.fill_diagonal(g_neg, 0.0)
    g_pos = (np.diag(w) - 1.0) / n
    du = (g_neg + g_neg.T) @ u + g_pos[:, None] * up
    dup = g_pos[:, None] * u
    # through the normalization x / |x|
    dh = (du - np.sum(du * u, axis=1, keepdims=True) * u) / nu
    dhp = (dup - np.sum(dup * up, axis=1, keepdims=True) * up) / nup
    return loss, dh, dhp


def joint_loss(ce: float, con: float, lam: float = 1.0) -> float:
    if lam < 0:
        raise ValueError("lam must be non-negative")
    return ce + lam * con


def mix_features(orig, variant, alpha: float = 0.5):
    """alpha * orig + (1 - alpha) * variant."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    orig = np.asarray(orig, dtype=np.float64)
    variant = np.asarray(variant, dtype=np.float64)
    if orig.shape != variant.shape:
        raise ModelError(f"cannot mix encodings of shapes {orig.shape} and {variant.shape}")
    return alpha * orig + (1.0 - alpha) * variant
