"""Source-side networks: the variational encoder, the image feature encoder used
as a contrastive target, the source reconstructor and the latent-to-attribute decoder.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .model import patchify, unpatchify
from .nn import Block, Linear, Module, gelu, layer_norm, sincos_pos_embed
from .numerics import ContractViolation, Rng, Tensor, exp, logsumexp
from .synthdata import CARDINALITIES


@dataclass(frozen=True)
class EncoderConfig:
    n_tokens: int = 8
    token_dim: int = 16
    latent_shape: tuple[int, int, int] = (3, 32, 32)
    dim: int = 128
    depth: int = 2
    heads: int = 4
    target_dim: int = 64
    target_patch: int = 4
    decoder_hidden: int = 256
    mlp_ratio: int = 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["latent_shape"] = list(self.latent_shape)
        return d


@dataclass(frozen=True)
class EncoderMode:
    kind: str = "variational"
    noise_std: float = 0.1

    def __post_init__(self):
        if self.kind not in ("plain", "plain_plus_noise", "variational"):
            raise ContractViolation(f"unknown encoder mode {self.kind!r}")
        if self.noise_std < 0:
            raise ContractViolation("noise_std must be >= 0")


@dataclass
class LatentPosterior:
    mu: Tensor
    log_sigma: Tensor

    @property
    def sigma(self) -> Tensor:
        return exp(self.log_sigma)


def _as_batch(x, dtype, shape: tuple) -> tuple[Tensor, bool]:
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))
    single = x.ndim == len(shape)
    if single:
        x = x.reshape((1,) + x.shape)
    if tuple(x.shape[1:]) != tuple(shape):
        raise ContractViolation(f"expected shape {shape}, got {tuple(x.shape[1:])}")
    return x, single


class VariationalEncoder(Module):
    """Token embeddings (n, d) -> Gaussian posterior over a (c, h, w) latent."""

    def __init__(self, cfg: EncoderConfig, rng: Rng):
        self._cfg = cfg
        size = int(np.prod(cfg.latent_shape))
        self.in_proj = Linear(cfg.token_dim, cfg.dim, rng.split("in_proj"))
        self.blocks = [Block(cfg.dim, cfg.heads, rng.split(f"block{i}"), cfg.mlp_ratio) for i in range(cfg.depth)]
        self.mu_head = Linear(cfg.dim, size, rng.split("mu_head"))
        self.log_sigma_head = Linear(cfg.dim, size, rng.split("log_sigma_head"))

    def __call__(self, x) -> LatentPosterior:
        cfg = self._cfg
        x, single = _as_batch(x, self.in_proj.weight.dtype, (cfg.n_tokens, cfg.token_dim))
        h = self.in_proj(x)
        for blk in self.blocks:
            h = blk(h)
        pooled = h.mean(axis=1)
        b = pooled.shape[0]
        shape = (b,) + tuple(cfg.latent_shape)
        mu = self.mu_head(pooled).reshape(shape)
        log_sigma = self.log_sigma_head(pooled).reshape(shape)
        if single:
            mu, log_sigma = mu.reshape(cfg.latent_shape), log_sigma.reshape(cfg.latent_shape)
        return LatentPosterior(mu, log_sigma)


def reparameterize(post: LatentPosterior, rng: Rng | None = None, eps: np.ndarray | None = None) -> Tensor:
    """mu + sigma * eps; eps is drawn from ``rng`` unless given, and carries no gradient."""
    if eps is None:
        if rng is None:
            raise ContractViolation("need an rng or an explicit eps")
        eps = rng.normal(post.mu.shape, dtype=post.mu.dtype)
    return post.mu + post.sigma * Tensor(np.asarray(eps, dtype=post.mu.dtype))


def encode_source(encoder: VariationalEncoder, x, mode: EncoderMode, rng: Rng | None = None,
                  eps: np.ndarray | None = None) -> tuple[Tensor, LatentPosterior]:
    """Dispatch over the encoder ablation modes; returns (z0, posterior)."""
    post = encoder(x)
    if mode.kind == "plain":
        return post.mu, post
    if mode.kind == "plain_plus_noise":
        if eps is None:
            eps = rng.normal(post.mu.shape, dtype=post.mu.dtype)
        return post.mu + Tensor(np.asarray(eps, dtype=post.mu.dtype) * mode.noise_std), post
    return reparameterize(post, rng, eps), post


class TargetEncoder(Module):
    """Image -> feature map shaped like z0 (patch embed, 2 attention blocks, linear head)."""

    def __init__(self, cfg: EncoderConfig, rng: Rng):
        self._cfg = cfg
        c, h, _ = cfg.latent_shape
        p = cfg.target_patch
        self.patch_embed = Linear(c * p * p, cfg.target_dim, rng.split("patch_embed"))
        self._pos = sincos_pos_embed(cfg.target_dim, h // p)
        self.blocks = [Block(cfg.target_dim, cfg.heads, rng.split(f"block{i}"), cfg.mlp_ratio) for i in range(2)]
        self.head = Linear(cfg.target_dim, c * p * p, rng.split("head"))

    def __call__(self, image) -> Tensor:
        cfg = self._cfg
        img, single = _as_batch(image, self.head.weight.dtype, cfg.latent_shape)
        h = self.patch_embed(patchify(img, cfg.target_patch)) + self._pos.astype(img.dtype)
        for blk in self.blocks:
            h = blk(h)
        out = unpatchify(self.head(layer_norm(h)), cfg.target_patch, cfg.latent_shape)
        return out.reshape(cfg.latent_shape) if single else out


class SourceReconstructor(Module):
    """z0 -> reconstruction of the token matrix x (the reconstruction-loss variant)."""

    def __init__(self, cfg: EncoderConfig, rng: Rng):
        self._cfg = cfg
        size = int(np.prod(cfg.latent_shape))
        self.fc1 = Linear(size, cfg.decoder_hidden, rng.split("fc1"))
        self.fc2 = Linear(cfg.decoder_hidden, cfg.n_tokens * cfg.token_dim, rng.split("fc2"))

    def __call__(self, z: Tensor) -> Tensor:
        b = z.shape[0]
        return self.fc2(gelu(self.fc1(z.reshape(b, -1)))).reshape(b, self._cfg.n_tokens, self._cfg.token_dim)


def source_projection(cfg: EncoderConfig, seed: int = 0) -> np.ndarray:
    """Frozen random map from flattened x to latent size (source-source contrastive target)."""
    size = int(np.prod(cfg.latent_shape))
    w = Rng(seed).split("source_projection").normal((cfg.n_tokens * cfg.token_dim, size))
    return (w / np.sqrt(cfg.n_tokens * cfg.token_dim)).astype(np.float32)


class LatentDecoder(Module):
    """Flattened latent -> one categorical head per attribute slot."""

    def __init__(self, cfg: EncoderConfig, rng: Rng, cardinalities=CARDINALITIES):
        self._cfg = cfg
        self._cards = tuple(cardinalities)
        size = int(np.prod(cfg.latent_shape))
        self.fc1 = Linear(size, cfg.decoder_hidden, rng.split("fc1"))
        self.fc2 = Linear(cfg.decoder_hidden, sum(self._cards), rng.split("fc2"))

    @property
    def cardinalities(self) -> tuple[int, ...]:
        return self._cards

    def __call__(self, z) -> Tensor:
        z, single = _as_batch(z, self.fc1.weight.dtype, self._cfg.latent_shape)
        b = z.shape[0]
        logits = self.fc2(gelu(self.fc1(z.reshape(b, -1))))
        return logits.reshape(-1) if single else logits

    def split_logits(self, logits: np.ndarray) -> list[np.ndarray]:
        bounds = np.cumsum((0,) + self._cards)
        return [logits[..., bounds[i]:bounds[i + 1]] for i in range(len(self._cards))]

    def predict_ids(self, z) -> np.ndarray:
        """Argmax per slot; (B, n_slots) integer ids."""
        logits = self(z).data
        if logits.ndim == 1:
            logits = logits[None]
        return np.stack([g.argmax(-1) for g in self.split_logits(logits)], axis=-1)


def decode_latent(decoder: LatentDecoder, z) -> list[np.ndarray]:
    """Per-slot logits for one latent or a batch."""
    return decoder.split_logits(decoder(z).data)


def slot_cross_entropy(decoder: LatentDecoder, logits: Tensor, ids: np.ndarray) -> Tensor:
    """Mean over examples of the summed per-slot cross-entropies."""
    bounds = np.cumsum((0,) + decoder.cardinalities)
    b = logits.shape[0]
    total = None
    for s in range(len(decoder.cardinalities)):
        part = logits[:, bounds[s]:bounds[s + 1]]
        picked = part[np.arange(b), ids[:, s]]
        ce = (logsumexp(part, axis=1) - picked).mean()
        total = ce if total is None else total + ce
    return total

