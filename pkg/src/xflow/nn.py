"""Small layer library on top of :mod:`xflow.numerics`."""
from __future__ import annotations

import math

import numpy as np

from .numerics import (
    ContractViolation,
    Rng,
    Tensor,
    affine,
    attention,
    gelu,
    normalize,
    parameter,
    sigmoid,
)


class Module:
    """Holds parameters and child modules; names are dotted paths."""

    def named_parameters(self, prefix: str = ""):
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            path = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield path, val
            elif isinstance(val, Module):
                yield from val.named_parameters(path + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True):
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            unexpected = sorted(set(state) - set(own))
            if missing or unexpected:
                raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for k, p in own.items():
            if k not in state:
                continue
            arr = np.asarray(state[k])
            if arr.shape != p.shape:
                raise ContractViolation(f"{k}: shape {arr.shape} != expected {p.shape}")
            p.data = arr.astype(p.dtype).copy()

    def astype(self, dtype):
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
        return self

    def num_params(self) -> int:
        return sum(p.data.size for p in self.parameters())


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: Rng, std: float = 0.02, zero: bool = False, bias: bool = True):
        w = np.zeros((d_in, d_out), np.float32) if zero else rng.truncated_normal((d_in, d_out), std)
        self.weight = parameter(w)
        self.bias = parameter(np.zeros(d_out, np.float32)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if self.bias is None:
            return x @ self.weight
        if x.ndim == 1:
            return affine(x.reshape(1, -1), self.weight, self.bias).reshape(-1)
        return affine(x, self.weight, self.bias)


def layer_norm(x: Tensor, eps: float = 1e-6) -> Tensor:
    return normalize(x, eps)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gamma = parameter(np.ones(dim, np.float32))
        self.beta = parameter(np.zeros(dim, np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x) * self.gamma + self.beta


def silu(x: Tensor) -> Tensor:
    return x * sigmoid(x)


class SelfAttention(Module):
    """Multi-head attention whose queries, keys and values all come from one token set."""

    kv_source = "self"

    def __init__(self, dim: int, heads: int, rng: Rng):
        if dim % heads:
            raise ContractViolation(f"embed dim {dim} not divisible by heads {heads}")
        self.heads = heads
        # no bias: a key bias would get an identically zero gradient under softmax
        self.qkv = Linear(dim, 3 * dim, rng.split("qkv"), bias=False)
        self.proj = Linear(dim, dim, rng.split("proj"))

    def __call__(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        h = self.heads
        dh = d // h
        qkv = self.qkv(x).reshape(b, n, 3, h, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        out = attention(q, k, v, 1.0 / math.sqrt(dh)).transpose(0, 2, 1, 3).reshape(b, n, d)
        return self.proj(out)


class MLP(Module):
    def __init__(self, dim: int, hidden: int, rng: Rng, d_out: int | None = None):
        self.fc1 = Linear(dim, hidden, rng.split("fc1"))
        self.fc2 = Linear(hidden, d_out or dim, rng.split("fc2"))

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


class Block(Module):
    """Pre-norm transformer block (attention + MLP, both residual)."""

    def __init__(self, dim: int, heads: int, rng: Rng, mlp_ratio: int = 4):
        self.norm1 = LayerNorm(dim)
        self.attn = SelfAttention(dim, heads, rng.split("attn"))
        self.norm2 = LayerNorm(dim)
        self.mlp = MLP(dim, mlp_ratio * dim, rng.split("mlp"))

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


def sincos_pos_embed(dim: int, grid: int) -> np.ndarray:
    """Fixed 2-D sin-cos position table of shape (grid*grid, dim)."""
    if dim % 4:
        raise ContractViolation("position embedding dim must be divisible by 4")
    quarter = dim // 4
    omega = 1.0 / 10000 ** (np.arange(quarter) / quarter)
    ys, xs = np.meshgrid(np.arange(grid), np.arange(grid), indexing="ij")
    parts = []
    for coord in (ys.reshape(-1), xs.reshape(-1)):
        ang = coord[:, None] * omega[None, :]
        parts += [np.sin(ang), np.cos(ang)]
    return np.concatenate(parts, axis=1).astype(np.float32)
