"""Training objectives and their gradients with respect to network outputs.

Every function returns ``(loss, grads...)``; losses are float64 scalars and
gradients come back in the dtype of the corresponding input.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ContractError, ShapeError
from .nncore import normalize_rows, normalize_rows_backward


def _logsumexp(s: np.ndarray) -> np.ndarray:
    top = s.max(axis=1, keepdims=True)
    return (top + np.log(np.exp(s - top).sum(axis=1, keepdims=True))).ravel()


def reconstruction_loss(x: np.ndarray, x_hat: np.ndarray) -> tuple[float, np.ndarray]:
    """Sum of squared reconstruction errors divided by the batch size."""
    diff = x_hat.astype(np.float64) - x
    b = x.shape[0]
    loss = float(np.einsum("ij,ij->", diff, diff)) / b
    return loss, (2.0 / b * diff).astype(x_hat.dtype)


def feature_contrastive_loss(
    h: np.ndarray, h_views: Sequence[np.ndarray], tau: float
) -> tuple[float, np.ndarray, list[np.ndarray]]:
    """InfoNCE between the fused features ``h`` and each view's features.

    For every view, row ``i`` of ``h`` is pulled towards row ``i`` of the view
    features and pushed from the other rows; the softmax denominator includes
    the positive pair. Per-view losses are averaged over the batch and summed
    over views.
    """
    b = h.shape[0]
    if b < 2:
        raise ContractError("feature contrast needs at least two samples for negatives")
    if tau <= 0:
        raise ContractError("temperature must be positive")
    hu, hn = normalize_rows(h)
    grad_hu = np.zeros_like(hu)
    grad_views = []
    loss = 0.0
    eye = np.eye(b)
    for hv in h_views:
        if hv.shape != h.shape:
            raise ShapeError(f"view features {hv.shape} do not match fused features {h.shape}")
        vu, vn = normalize_rows(hv)
        s = hu @ vu.T / tau
        lse = _logsumexp(s)
        loss += float((lse - np.diag(s)).mean())
        p = np.exp(s - lse[:, None])
        ds = (p - eye) / b
        grad_hu += ds @ vu / tau
        grad_views.append(normalize_rows_backward(vu, vn, ds.T @ hu / tau).astype(hv.dtype))
    grad_h = normalize_rows_backward(hu, hn, grad_hu).astype(h.dtype)
    return loss, grad_h, grad_views


def model_contrastive_loss(
    h: np.ndarray, h_global: np.ndarray, z: np.ndarray, tau: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """Two-way softmax with the global model's features as the positive and
    the local low-level features as the negative.

    Returns gradients for ``h`` and ``z`` only; ``h_global`` is a fixed target.
    """
    if z.shape[1] != h.shape[1]:
        raise ShapeError(f"low-level width {z.shape[1]} != common-semantics width {h.shape[1]}")
    if h_global.shape != h.shape or z.shape[0] != h.shape[0]:
        raise ShapeError("h, h_global and z must have matching rows")
    if tau <= 0:
        raise ContractError("temperature must be positive")
    b = h.shape[0]
    hu, hn = normalize_rows(h)
    gu, _ = normalize_rows(h_global)
    zu, zn = normalize_rows(z)
    pos = np.einsum("ij,ij->i", hu, gu) / tau
    neg = np.einsum("ij,ij->i", hu, zu) / tau
    gap = neg - pos
    loss = float(np.logaddexp(0.0, gap).mean())
    w = 0.5 * (1.0 + np.tanh(0.5 * gap)) / b  # sigmoid(gap) / B
    grad_hu = (w[:, None] * (zu - gu)) / tau
    grad_zu = (w[:, None] * hu) / tau
    grad_h = normalize_rows_backward(hu, hn, grad_hu).astype(h.dtype)
    grad_z = normalize_rows_backward(zu, zn, grad_zu).astype(z.dtype)
    return loss, grad_h, grad_z


def distillation_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean over the batch of squared distances between rows."""
    return reconstruction_loss(target, pred)
