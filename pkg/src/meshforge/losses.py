"""Training objectives: non-saturating GAN losses, R1 penalty, SDF regularizer.

Sign convention: ``discriminator_loss`` returns the quantity the discriminator
descends (fake logits are pushed down, real logits up), and ``generator_loss``
returns the non-saturating objective the generator descends (fake logits are
pushed up). All functions are pure.
"""

from __future__ import annotations

import numpy as np

from .tetgrid import GeometryField

__all__ = [
    "g",
    "discriminator_loss",
    "generator_loss",
    "r1_penalty",
    "sdf_regularizer",
    "sdf_regularizer_grad",
    "total_loss",
]


def g(u):
    """Stable -log(1 + exp(-u)); strictly increasing with range (-inf, 0).

    For u < -30 the value is u to machine precision; for u > 30 it is -e^-u.
    """
    u = np.asarray(u, dtype=np.float64)
    out = np.where(
        u < -30.0,
        u,
        np.where(u > 30.0, -np.exp(-np.minimum(np.abs(u), 700.0)), -np.log1p(np.exp(-np.clip(u, -30.0, 30.0)))),
    )
    return out if out.ndim else float(out)


def _softplus(u):
    """log(1 + exp(u)) = -g(-u), stable at both tails."""
    u = np.asarray(u, dtype=np.float64)
    return np.maximum(u, 0.0) + np.log1p(np.exp(-np.abs(u)))


def _sigmoid(u):
    u = np.asarray(u, dtype=np.float64)
    e = np.exp(-np.abs(u))
    return np.where(u >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def discriminator_loss(real_logits, fake_logits, r1_grad_sq_norms=None, r1_weight: float = 0.0) -> float:
    """Mean g(fake) + mean(g(-real) + lambda * |grad|^2); descended by D."""
    real = np.atleast_1d(np.asarray(real_logits, dtype=np.float64))
    fake = np.atleast_1d(np.asarray(fake_logits, dtype=np.float64))
    if real.size == 0 or fake.size == 0:
        raise ValueError("discriminator_loss requires nonempty real and fake batches")
    penalty = 0.0
    if r1_grad_sq_norms is not None:
        penalty = r1_weight * np.atleast_1d(np.asarray(r1_grad_sq_norms, dtype=np.float64))
    return float(np.mean(g(fake)) + np.mean(g(-real) + penalty))


def generator_loss(fake_logits) -> float:
    """Mean -g(fake); decreases as fake logits rise (non-saturating form)."""
    fake = np.atleast_1d(np.asarray(fake_logits, dtype=np.float64))
    if fake.size == 0:
        raise ValueError("generator_loss requires a nonempty batch")
    return float(np.mean(-g(fake)))


def r1_penalty(grad_images) -> float:
    """Mean over the batch of squared L2 norms of per-sample input gradients."""
    grads = np.asarray(grad_images, dtype=np.float64)
    if grads.size == 0:
        return 0.0
    flat = grads.reshape(grads.shape[0], -1)
    return float(np.mean((flat * flat).sum(axis=1)))


def _crossing_edges(sdf: np.ndarray, edges: np.ndarray) -> np.ndarray:
    si = sdf[edges[:, 0]]
    sj = sdf[edges[:, 1]]
    return (si > 0) != (sj > 0)


def sdf_regularizer(field: GeometryField, edges: np.ndarray) -> float:
    """Cross-entropy between sigmoid(SDF) and the neighbor's sign over all
    sign-crossing grid edges; zero when no edge crosses."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size == 0:
        return 0.0
    sdf = field.sdf
    cross = _crossing_edges(sdf, edges)
    if not cross.any():
        return 0.0
    si = sdf[edges[cross, 0]]
    sj = sdf[edges[cross, 1]]
    # H(sigmoid(s), t) with target t = (sign+1)/2 in {0, 1}
    ti = (si > 0).astype(np.float64)
    tj = (sj > 0).astype(np.float64)
    hij = tj * _softplus(-si) + (1.0 - tj) * _softplus(si)
    hji = ti * _softplus(-sj) + (1.0 - ti) * _softplus(sj)
    return float(np.sum(hij + hji))


def sdf_regularizer_grad(field: GeometryField, edges: np.ndarray) -> np.ndarray:
    """Gradient of ``sdf_regularizer`` w.r.t. the per-vertex SDF values."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    grad = np.zeros_like(field.sdf)
    if edges.size == 0:
        return grad
    sdf = field.sdf
    cross = _crossing_edges(sdf, edges)
    if not cross.any():
        return grad
    i = edges[cross, 0]
    j = edges[cross, 1]
    si, sj = sdf[i], sdf[j]
    ti = (si > 0).astype(np.float64)
    tj = (sj > 0).astype(np.float64)
    # d/ds [t*softplus(-s) + (1-t)*softplus(s)] = sigmoid(s) - t
    np.add.at(grad, i, _sigmoid(si) - tj)
    np.add.at(grad, j, _sigmoid(sj) - ti)
    return grad


def total_loss(l_rgb: float, l_mask: float, l_reg: float, mu: float) -> float:
    """Combined objective: image term + silhouette term + mu * SDF regularizer."""
    return float(l_rgb + l_mask + mu * l_reg)
