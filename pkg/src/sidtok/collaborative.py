"""Symmetric in-batch InfoNCE between trigger and target embeddings."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, NumericError


def _normalize(a: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(a, axis=1)
    if np.any(norms == 0):
        raise NumericError(f"zero-norm row in {what}")
    return a / norms[:, None], norms


def _log_softmax(logits: np.ndarray, axis: int) -> np.ndarray:
    m = logits.max(axis=axis, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def infonce_loss(z_tr: np.ndarray, z_ta: np.ndarray, temperature: float = 0.07,
                 with_grad: bool = True):
    """Loss (and gradients w.r.t. both blocks) of the bidirectional InfoNCE.

    Row ``b`` of ``z_tr`` is positive with row ``b`` of ``z_ta``; every other
    row of the opposite block is a negative. Logits are cosine similarities
    over ``temperature``. Returns ``loss`` or ``(loss, grad_tr, grad_ta)``.
    """
    z_tr = np.asarray(z_tr, dtype=np.float64)
    z_ta = np.asarray(z_ta, dtype=np.float64)
    if z_tr.shape != z_ta.shape or z_tr.ndim != 2 or z_tr.shape[0] < 1:
        raise DimensionError(f"trigger/target blocks must match: {z_tr.shape} vs {z_ta.shape}")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    b = z_tr.shape[0]
    u, nu = _normalize(z_tr, "trigger embeddings")
    v, nv = _normalize(z_ta, "target embeddings")
    logits = (u @ v.T) / temperature
    lp_row = _log_softmax(logits, axis=1)
    lp_col = _log_softmax(logits, axis=0)
    diag = np.arange(b)
    loss = -0.5 * (lp_row[diag, diag].mean() + lp_col[diag, diag].mean())
    if not with_grad:
        return float(loss)

    eye = np.eye(b)
    d_logits = 0.5 / b * ((np.exp(lp_row) - eye) + (np.exp(lp_col) - eye))
    d_sim = d_logits / temperature
    d_u = d_sim @ v
    d_v = d_sim.T @ u
    grad_tr = (d_u - u * np.sum(u * d_u, axis=1, keepdims=True)) / nu[:, None]
    grad_ta = (d_v - v * np.sum(v * d_v, axis=1, keepdims=True)) / nv[:, None]
    return float(loss), grad_tr, grad_ta
