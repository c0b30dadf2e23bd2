"""Training objectives: flow-matching MSE, KL to the standard normal, the encoding
losses (reconstruction or symmetric contrastive), and their weighted sum."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nn import Module
from .numerics import ContractViolation, NumericFailure, Tensor, exp, logsumexp, parameter, sqrt

ENC_MODES = ("recon", "contrast_source", "contrast_target")
FULLSCALE_LAMBDA_KL = 1e-4


@dataclass(frozen=True)
class LossWeights:
    lambda_kl: float = 1e-2
    enc_mode: str = "contrast_target"

    def __post_init__(self):
        if self.lambda_kl < 0:
            raise ContractViolation("lambda_kl must be >= 0")
        if self.enc_mode not in ENC_MODES:
            raise ContractViolation(f"enc_mode must be one of {ENC_MODES}")


@dataclass
class LossBreakdown:
    l_fm: float
    l_enc: float
    l_kl: float
    total: float
    tensor: Tensor | None = None  # differentiable total, when built from tensors

    def as_row(self) -> dict:
        return {"l_fm": self.l_fm, "l_enc": self.l_enc, "l_kl": self.l_kl, "total": self.total}


class ContrastiveHead(Module):
    """Learnable temperature, stored as its log so it stays positive."""

    def __init__(self, inv_tau: float = 10.0):
        self.log_tau = parameter(np.array(-math.log(inv_tau), dtype=np.float32))

    @property
    def tau(self) -> float:
        return float(np.exp(self.log_tau.data))


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _same_shape(a, b):
    if tuple(a.shape) != tuple(b.shape):
        raise ContractViolation(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def fm_loss(v_pred, v_hat) -> Tensor:
    _same_shape(v_pred, v_hat)
    d = _lift(v_pred) - _lift(v_hat)
    return (d * d).mean()


def recon_loss(decoded, x) -> Tensor:
    _same_shape(decoded, x)
    d = _lift(decoded) - _lift(x)
    return (d * d).mean()


def kl_loss(mu, log_sigma) -> Tensor:
    """Elementwise-mean KL( N(mu, sigma^2) || N(0, 1) ), sigma = exp(log_sigma)."""
    mu, log_sigma = _lift(mu), _lift(log_sigma)
    var = exp(log_sigma * 2.0)
    return ((mu * mu + var - 1.0 - log_sigma * 2.0) * 0.5).mean()


def contrastive_loss(z0_batch, zhat_batch, log_tau) -> Tensor:
    """Symmetric cross-entropy over cosine similarities scaled by 1/tau."""
    _same_shape(z0_batch, zhat_batch)
    a, b = _lift(z0_batch), _lift(zhat_batch)
    n = a.shape[0]
    if n < 1:
        raise ContractViolation("contrastive loss needs at least one pair")
    a = a.reshape(n, -1)
    b = b.reshape(n, -1)
    na = sqrt((a * a).sum(axis=1, keepdims=True))
    nb = sqrt((b * b).sum(axis=1, keepdims=True))
    if np.any(na.data == 0) or np.any(nb.data == 0):
        raise ContractViolation("cosine similarity undefined for a zero-norm latent")
    sim = (a / na) @ (b / nb).transpose(1, 0)
    logits = sim * exp(-_lift(log_tau))
    diag = logits[np.arange(n), np.arange(n)]
    l_i2t = (logsumexp(logits, axis=1) - diag).mean()
    l_t2i = (logsumexp(logits, axis=0) - diag).mean()
    return (l_i2t + l_t2i) * 0.5


def total_loss(l_fm, l_enc, l_kl, weights: LossWeights) -> LossBreakdown:
    parts = [float(v.data) if isinstance(v, Tensor) else float(v) for v in (l_fm, l_enc, l_kl)]
    if not all(math.isfinite(v) for v in parts):
        raise NumericFailure(f"non-finite loss term(s): l_fm={parts[0]}, l_enc={parts[1]}, l_kl={parts[2]}")
    tensor = None
    if any(isinstance(v, Tensor) for v in (l_fm, l_enc, l_kl)):
        tensor = _lift(l_fm) + _lift(l_enc) + _lift(l_kl) * weights.lambda_kl
    total = parts[0] + parts[1] + weights.lambda_kl * parts[2]
    return LossBreakdown(parts[0], parts[1], parts[2], total, tensor)
