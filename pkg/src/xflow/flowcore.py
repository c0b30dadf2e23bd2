"""Interpolant paths between source and target latents, their velocities, and timestep draws.

All functions accept numpy arrays or :class:`~xflow.numerics.Tensor` states.
``t`` may be a scalar or a per-example vector matching the leading batch axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import ContractViolation, Rng

SIGMA_MIN = 1e-5
T_CLAMP = 1e-6


@dataclass(frozen=True)
class InterpolantConfig:
    kind: str = "linear"
    sigma_min: float = SIGMA_MIN

    def __post_init__(self):
        if self.kind not in ("linear", "sincos"):
            raise ContractViolation(f"unknown interpolant kind {self.kind!r}")
        if not 0.0 <= self.sigma_min < 1.0:
            raise ContractViolation("sigma_min must lie in [0, 1)")


@dataclass(frozen=True)
class TimestepSchedule:
    kind: str = "logit_normal"
    loc: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("uniform", "logit_normal"):
            raise ContractViolation(f"unknown timestep schedule {self.kind!r}")
        if self.scale <= 0:
            raise ContractViolation("logit-normal scale must be positive")


@dataclass
class FlowSample:
    z0: object
    z1: object
    t: object
    z_t: object
    v_hat: object


def _check(z0, z1, t=None):
    if tuple(z0.shape) != tuple(z1.shape):
        raise ContractViolation(f"shape mismatch: {tuple(z0.shape)} vs {tuple(z1.shape)}")
    if t is not None:
        ta = np.asarray(t)
        if np.any(ta < 0.0) or np.any(ta > 1.0):
            raise ContractViolation("t must lie in [0, 1]")


def _coef(c, like):
    """Broadcast a scalar or per-example coefficient against a batched state."""
    c = np.asarray(c, dtype=np.float64)
    if c.ndim == 0:
        return float(c)
    return c.reshape(c.shape + (1,) * (len(like.shape) - c.ndim)).astype(like.dtype)


def interp_linear(z0, z1, t, sigma_min: float = SIGMA_MIN):
    _check(z0, z1, t)
    t = np.asarray(t, dtype=np.float64)
    return z1 * _coef(t, z1) + z0 * _coef(1.0 - (1.0 - sigma_min) * t, z0)


def target_velocity_linear(z0, z1, sigma_min: float = SIGMA_MIN):
    _check(z0, z1)
    return z1 - z0 * (1.0 - sigma_min)


def interp_sincos(z0, z1, t):
    _check(z0, z1, t)
    ang = 0.5 * math.pi * np.asarray(t, dtype=np.float64)
    return z1 * _coef(np.sin(ang), z1) + z0 * _coef(np.cos(ang), z0)


def target_velocity_sincos(z0, z1, t):
    _check(z0, z1, t)
    ang = 0.5 * math.pi * np.asarray(t, dtype=np.float64)
    h = 0.5 * math.pi
    return z1 * _coef(h * np.cos(ang), z1) - z0 * _coef(h * np.sin(ang), z0)


def interpolate(cfg: InterpolantConfig, z0, z1, t):
    if cfg.kind == "linear":
        return interp_linear(z0, z1, t, cfg.sigma_min)
    return interp_sincos(z0, z1, t)


def target_velocity(cfg: InterpolantConfig, z0, z1, t):
    if cfg.kind == "linear":
        return target_velocity_linear(z0, z1, cfg.sigma_min)
    return target_velocity_sincos(z0, z1, t)


def make_flow_sample(cfg: InterpolantConfig, z0, z1, t) -> FlowSample:
    return FlowSample(z0, z1, t, interpolate(cfg, z0, z1, t), target_velocity(cfg, z0, z1, t))


def sample_timestep(rng: Rng, schedule: TimestepSchedule, size=None):
    """Draw training times strictly inside (0, 1)."""
    if schedule.kind == "uniform":
        t = rng.uniform(size if size is not None else ())
    else:
        n = rng.normal(size if size is not None else ())
        x = schedule.loc + schedule.scale * n
        t = 0.5 * (1.0 + np.tanh(0.5 * x))  # overflow-free sigmoid
    t = np.clip(t, T_CLAMP, 1.0 - T_CLAMP)
    return float(t) if size is None else t
