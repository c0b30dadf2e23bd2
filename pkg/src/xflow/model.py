"""Velocity network: a self-attention transformer over patch tokens.

The conditional/unconditional switch is a learnable token (one of two) placed
in front of the patch sequence.  Time enters only through per-block
scale/shift modulation after layer normalization.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .nn import MLP, Linear, Module, SelfAttention, layer_norm, silu, sincos_pos_embed
from .numerics import ContractViolation, NumericFailure, Rng, Tensor, concat, getitem, no_grad, parameter


@dataclass(frozen=True)
class VelocityNetConfig:
    state_shape: tuple[int, int, int] = (3, 32, 32)
    patch: int = 4
    embed_dim: int = 128
    depth: int = 4
    heads: int = 4
    time_dim: int = 128
    mlp_ratio: int = 2

    def __post_init__(self):
        c, h, w = self.state_shape
        if h % self.patch or w % self.patch:
            raise ContractViolation(f"patch {self.patch} does not divide spatial dims {(h, w)}")
        if self.embed_dim % self.heads:
            raise ContractViolation("embed_dim must be divisible by heads")
        if self.time_dim % 2:
            raise ContractViolation("time_dim must be even")
        if h != w:
            raise ContractViolation("square states only")

    @property
    def num_tokens(self) -> int:
        _, h, w = self.state_shape
        return (h // self.patch) * (w // self.patch)

    @property
    def token_dim(self) -> int:
        return self.state_shape[0] * self.patch * self.patch

    def to_dict(self) -> dict:
        d = asdict(self)
        d["state_shape"] = list(self.state_shape)
        return d


def time_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding of ``1000*t``, sin/cos interleaved per frequency."""
    if dim % 2:
        raise ContractViolation("time embedding dim must be even")
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0) or np.any(t > 1):
        raise ContractViolation("t must lie in [0, 1]")
    k = np.arange(dim // 2)
    omega = 10000.0 ** (-2.0 * k / dim)
    ang = 1000.0 * t[..., None] * omega
    out = np.empty(t.shape + (dim,))
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


def patchify(z, patch: int):
    """(c,h,w) -> (tokens, c*p*p), or batched (B,c,h,w) -> (B, tokens, c*p*p).

    Works on numpy arrays and tensors alike.
    """
    batched = len(z.shape) == 4
    if not batched:
        z = z.reshape((1,) + tuple(z.shape))
    b, c, h, w = z.shape
    if h % patch or w % patch:
        raise ContractViolation(f"patch {patch} does not divide {(h, w)}")
    gh, gw = h // patch, w // patch
    out = z.reshape(b, c, gh, patch, gw, patch).transpose(0, 2, 4, 1, 3, 5).reshape(b, gh * gw, c * patch * patch)
    return out if batched else out.reshape(gh * gw, c * patch * patch)


def unpatchify(tokens, patch: int, shape: tuple[int, int, int]):
    c, h, w = shape
    gh, gw = h // patch, w // patch
    batched = len(tokens.shape) == 3
    if not batched:
        tokens = tokens.reshape((1,) + tuple(tokens.shape))
    b = tokens.shape[0]
    out = tokens.reshape(b, gh, gw, c, patch, patch).transpose(0, 3, 1, 4, 2, 5).reshape(b, c, h, w)
    return out if batched else out.reshape(c, h, w)


class TimeModulation(Module):
    """Two-layer MLP from the time embedding to (scale1, shift1, scale2, shift2)."""

    def __init__(self, time_dim: int, dim: int, rng: Rng):
        self.fc1 = Linear(time_dim, dim, rng.split("fc1"))
        self.fc2 = Linear(dim, 4 * dim, rng.split("fc2"))

    def __call__(self, temb: Tensor) -> list[Tensor]:
        m = self.fc2(silu(self.fc1(temb)))  # (B, 4D)
        d = m.shape[-1] // 4
        b = m.shape[0]
        return [m[:, i * d:(i + 1) * d].reshape(b, 1, d) for i in range(4)]


class ModulatedBlock(Module):
    def __init__(self, dim: int, heads: int, time_dim: int, rng: Rng, mlp_ratio: int = 2):
        self.mod = TimeModulation(time_dim, dim, rng.split("mod"))
        self.attn = SelfAttention(dim, heads, rng.split("attn"))
        self.mlp = MLP(dim, mlp_ratio * dim, rng.split("mlp"))

    def __call__(self, x: Tensor, temb: Tensor) -> Tensor:
        scale1, shift1, scale2, shift2 = self.mod(temb)
        x = x + self.attn(layer_norm(x) * (scale1 + 1.0) + shift1)
        return x + self.mlp(layer_norm(x) * (scale2 + 1.0) + shift2)


class VelocityNet(Module):
    def __init__(self, cfg: VelocityNetConfig, rng: Rng):
        self._cfg = cfg
        d = cfg.embed_dim
        self.patch_embed = Linear(cfg.token_dim, d, rng.split("patch_embed"))
        self._pos = sincos_pos_embed(d, cfg.state_shape[1] // cfg.patch)
        self.g_uc = parameter(rng.split("g_uc").truncated_normal((d,), 0.02))
        self.g_c = parameter(rng.split("g_c").truncated_normal((d,), 0.02))
        self.blocks = [ModulatedBlock(d, cfg.heads, cfg.time_dim, rng.split(f"block{i}"), cfg.mlp_ratio) for i in range(cfg.depth)]
        self.head = Linear(d, cfg.token_dim, rng.split("head"))
        # per-indicator call counts, index 0 = unconditional
        self._indicator_calls = np.zeros(2, dtype=np.int64)

    @property
    def config(self) -> VelocityNetConfig:
        return self._cfg

    def attention_layers(self) -> list[SelfAttention]:
        return [blk.attn for blk in self.blocks]

    def reset_counters(self):
        self._indicator_calls[:] = 0

    @property
    def indicator_calls(self) -> np.ndarray:
        return self._indicator_calls.copy()

    def __call__(self, z_t, t, indicator) -> Tensor:
        cfg = self._cfg
        z_t = z_t if isinstance(z_t, Tensor) else Tensor(np.asarray(z_t, dtype=self.g_c.dtype))
        if z_t.ndim == 3:
            z_t = z_t.reshape((1,) + z_t.shape)
        if tuple(z_t.shape[1:]) != tuple(cfg.state_shape):
            raise ContractViolation(f"state shape {tuple(z_t.shape[1:])} != configured {cfg.state_shape}")
        b = z_t.shape[0]
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (b,))
        ind = np.broadcast_to(np.asarray(indicator, dtype=np.int64), (b,))
        if not np.isin(ind, (0, 1)).all():
            raise ContractViolation("indicator must be 0 or 1")
        self._indicator_calls += np.bincount(ind, minlength=2)

        temb = Tensor(time_embedding(t, cfg.time_dim).astype(self.g_c.dtype))
        x = self.patch_embed(patchify(z_t, cfg.patch)) + self._pos.astype(self.g_c.dtype)
        # only the rows actually selected enter the graph
        if (ind == 1).all():
            tok = self.g_c.reshape(1, 1, -1) + Tensor(np.zeros((b, 1, 1), dtype=self.g_c.dtype))
        elif (ind == 0).all():
            tok = self.g_uc.reshape(1, 1, -1) + Tensor(np.zeros((b, 1, 1), dtype=self.g_c.dtype))
        else:
            table = concat([self.g_uc.reshape(1, -1), self.g_c.reshape(1, -1)], axis=0)
            tok = getitem(table, ind).reshape(b, 1, -1)
        x = concat([tok, x], axis=1)
        for i, blk in enumerate(self.blocks):
            x = blk(x, temb)
            if not np.isfinite(x.data).all():
                raise NumericFailure(f"non-finite activations in block {i}", where=i)
        x = x[:, 1:, :]
        out = unpatchify(self.head(layer_norm(x)), cfg.patch, cfg.state_shape)
        if not np.isfinite(out.data).all():
            raise NumericFailure("non-finite velocity output", where=len(self.blocks))
        return out

    def velocity(self, z: np.ndarray, t, indicator) -> np.ndarray:
        """Graph-free evaluation returning a numpy array."""
        with no_grad():
            return self(z, t, indicator).data
