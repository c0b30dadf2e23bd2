"""Joint training of the velocity network and the source encoder, plus checkpoint I/O."""
from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .flowcore import InterpolantConfig, TimestepSchedule, make_flow_sample, sample_timestep
from .losses import ContrastiveHead, LossBreakdown, LossWeights, contrastive_loss, fm_loss, kl_loss, recon_loss, total_loss
from .model import VelocityNet, VelocityNetConfig
from .nn import Module
from .numerics import ContractViolation, NumericFailure, Rng, Tensor, backward, no_grad
from .synthdata import DOMAIN, Split, embedding_bank
from .varenc import (
    EncoderConfig,
    EncoderMode,
    LatentDecoder,
    SourceReconstructor,
    TargetEncoder,
    VariationalEncoder,
    encode_source,
    slot_cross_entropy,
    source_projection,
)

log = logging.getLogger(__name__)

STRATEGIES = ("joint", "two_stage", "two_stage_finetune")
FULLSCALE_BETAS = (0.9, 0.9)
FULLSCALE_WEIGHT_DECAY = 0.03
FULLSCALE_UNCOND_RATE = 0.1


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    steps: int = 5000
    lr: float = 1e-4
    warmup: int = 200
    beta1: float = 0.9
    beta2: float = 0.9
    weight_decay: float = 0.03
    adam_eps: float = 1e-8
    max_grad_norm: float | None = None
    uncond_rate: float = 0.1
    lambda_kl: float = 1e-2
    enc_mode: str = "contrast_target"
    encoder_mode: str = "variational"
    noise_std: float = 0.1
    interpolant: str = "linear"
    sigma_min: float = 1e-5
    timestep: str = "logit_normal"
    t_loc: float = 0.0
    t_scale: float = 1.0
    strategy: str = "joint"
    stage1_steps: int = 0
    decoder_steps: int = 600
    decoder_lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.uncond_rate <= 1.0:
            raise ContractViolation("uncond_rate must lie in [0, 1]")
        if self.batch_size < 1:
            raise ContractViolation("batch_size must be >= 1")
        if self.uncond_rate > 0 and self.batch_size < 2:
            raise ContractViolation("batch_size must be >= 2 when uncond_rate > 0 (derangement needs two examples)")
        if self.strategy not in STRATEGIES:
            raise ContractViolation(f"strategy must be one of {STRATEGIES}")
        if self.stage1_steps < 0 or self.stage1_steps > self.steps:
            raise ContractViolation("stage1_steps must lie in [0, steps]")
        if self.steps < 0 or self.warmup < 0:
            raise ContractViolation("steps and warmup must be >= 0")
        # builds validate the remaining enums
        self.weights
        self.mode
        self.interpolant_config
        self.schedule

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_kl, self.enc_mode)

    @property
    def mode(self) -> EncoderMode:
        return EncoderMode(self.encoder_mode, self.noise_std)

    @property
    def interpolant_config(self) -> InterpolantConfig:
        return InterpolantConfig(self.interpolant, self.sigma_min)

    @property
    def schedule(self) -> TimestepSchedule:
        return TimestepSchedule(self.timestep, self.t_loc, self.t_scale)


@dataclass(frozen=True)
class ModelConfig:
    velocity: VelocityNetConfig = field(default_factory=VelocityNetConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        if tuple(self.velocity.state_shape) != tuple(self.encoder.latent_shape):
            raise ContractViolation("velocity state shape and encoder latent shape must agree")

    def to_dict(self) -> dict:
        return {"velocity": self.velocity.to_dict(), "encoder": self.encoder.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        v = dict(d.get("velocity", {}))
        e = dict(d.get("encoder", {}))
        if "state_shape" in v:
            v["state_shape"] = tuple(v["state_shape"])
        if "latent_shape" in e:
            e["latent_shape"] = tuple(e["latent_shape"])
        return cls(VelocityNetConfig(**v), EncoderConfig(**e))


class FlowSystem(Module):
    """Every trainable network of the method, under stable dotted names."""

    def __init__(self, mcfg: ModelConfig, rng: Rng):
        self._mcfg = mcfg
        self.velocity = VelocityNet(mcfg.velocity, rng.split("velocity"))
        self.encoder = VariationalEncoder(mcfg.encoder, rng.split("encoder"))
        self.target_encoder = TargetEncoder(mcfg.encoder, rng.split("target_encoder"))
        self.contrast_head = ContrastiveHead()
        self.reconstructor = SourceReconstructor(mcfg.encoder, rng.split("reconstructor"))
        self.decoder = LatentDecoder(mcfg.encoder, rng.split("decoder"))
        self._source_proj = source_projection(mcfg.encoder)

    @property
    def model_config(self) -> ModelConfig:
        return self._mcfg

    def source_parameters(self) -> list[Tensor]:
        mods = (self.encoder, self.target_encoder, self.contrast_head, self.reconstructor)
        return [p for m in mods for p in m.parameters()]

    def posterior_numpy(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        with no_grad():
            post = self.encoder(x)
            return post.mu.data, np.exp(post.log_sigma.data)

    def source_latent(self, x: np.ndarray, mode: EncoderMode, rng: Rng | None = None, use_mean: bool = False) -> np.ndarray:
        """z0 for generation: the posterior mean, or a draw per the encoder mode."""
        with no_grad():
            if use_mean:
                return self.encoder(x).mu.data
            z0, _ = encode_source(self.encoder, x, mode, rng)
            return z0.data


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    count: int = 0


def adamw_step(param: np.ndarray, grad: np.ndarray, state: AdamState, step: int, cfg: TrainConfig, lr: float) -> None:
    """In-place decoupled-weight-decay Adam update of ``param``."""
    if step < 1:
        raise ContractViolation("optimizer steps are counted from 1")
    if param.shape != grad.shape:
        raise ContractViolation("parameter and gradient shapes differ")
    if not np.isfinite(grad).all():
        raise NumericFailure("non-finite gradient")
    b1, b2 = cfg.beta1, cfg.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grad
    state.v *= b2
    state.v += (1.0 - b2) * (grad * grad)
    m_hat = state.m / (1.0 - b1 ** step)
    v_hat = state.v / (1.0 - b2 ** step)
    update = m_hat / (np.sqrt(v_hat) + cfg.adam_eps) + cfg.weight_decay * param
    param -= (lr * update).astype(param.dtype, copy=False)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup from 0 to the base rate, constant afterwards."""
    if step < 0:
        raise ContractViolation("step must be >= 0")
    if cfg.warmup == 0 or step >= cfg.warmup:
        return cfg.lr
    return cfg.lr * step / cfg.warmup


class AdamW:
    def __init__(self, params: list[Tensor], cfg: TrainConfig):
        self.cfg = cfg
        self.state = {id(p): AdamState(np.zeros_like(p.data), np.zeros_like(p.data)) for p in params}

    def step(self, params: list[Tensor], grads: dict, lr: float) -> None:
        for p in params:
            st = self.state[id(p)]
            st.count += 1
            adamw_step(p.data, grads[p], st, st.count, self.cfg, lr)


def clip_grads(grads: dict, params: list[Tensor], max_norm: float | None) -> float:
    norm = math.sqrt(sum(float((grads[p].astype(np.float64) ** 2).sum()) for p in params))
    if max_norm is not None and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            grads[p] = grads[p] * np.asarray(scale, dtype=grads[p].dtype)
    return norm


# ---------------------------------------------------------------------------
# conditioning drop


def derangement(rng: Rng, n: int) -> np.ndarray:
    """Uniform permutation with no fixed point (rejection sampling)."""
    if n < 2:
        raise ContractViolation("a derangement needs at least two elements")
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == np.arange(n)):
            return perm


def draw_indicator_batch(rng: Rng, batch_size: int, p: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-example indicators (1 = conditional) and the target pairing for unconditional rows."""
    if p > 0 and batch_size < 2:
        raise ContractViolation("unconditional rate > 0 needs batch_size >= 2")
    if p == 0:
        return np.ones(batch_size, dtype=np.int64), np.arange(batch_size)
    ind = (rng.uniform(batch_size) >= p).astype(np.int64)
    return ind, derangement(rng, batch_size)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class StepLog:
    step: int
    lr: float
    losses: LossBreakdown

    def as_row(self) -> dict:
        return {"step": self.step, **self.losses.as_row(), "lr": self.lr}


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    config: dict
    step: int = 0


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[StepLog]
    system: FlowSystem



def compute_losses(system: FlowSystem, cfg: TrainConfig, x: np.ndarray, z1: np.ndarray,
                   streams: dict[str, Rng], with_flow: bool = True) -> LossBreakdown:
    """Build the graph of the full objective for one batch."""
    dtype = system.velocity.g_c.dtype
    b = len(x)
    z0, post = encode_source(system.encoder, x, cfg.mode, streams["reparam"])

    if cfg.enc_mode == "contrast_target":
        l_enc = contrastive_loss(z0, system.target_encoder(z1), system.contrast_head.log_tau)
    elif cfg.enc_mode == "contrast_source":
        zhat = (x.reshape(b, -1).astype(dtype) @ system._source_proj.astype(dtype)).reshape(z0.shape)
        l_enc = contrastive_loss(z0, zhat, system.contrast_head.log_tau)
    else:
        l_enc = recon_loss(system.reconstructor(z0), Tensor(x.astype(dtype)))

    if cfg.encoder_mode == "variational":
        l_kl = kl_loss(post.mu, post.log_sigma)
    else:
        l_kl = Tensor(np.zeros((), dtype=dtype))

    if with_flow:
        t = sample_timestep(streams["timesteps"], cfg.schedule, size=b)
        ind, perm = draw_indicator_batch(streams["indicator"], b, cfg.uncond_rate)
        target = np.where(ind[:, None, None, None] == 1, z1, z1[perm]).astype(dtype)
        fs = make_flow_sample(cfg.interpolant_config, z0, Tensor(target), t)
        v_pred = system.velocity(fs.z_t, t, ind)
        l_fm = fm_loss(v_pred, fs.v_hat)
    else:
        l_fm = Tensor(np.zeros((), dtype=dtype))
    return total_loss(l_fm, l_enc, l_kl, cfg.weights)


def build_system(mcfg: ModelConfig, seed: int) -> FlowSystem:
    return FlowSystem(mcfg, Rng(seed).split("init"))


def train(cfg: TrainConfig, dataset: Split, mcfg: ModelConfig | None = None,
          progress: Callable[[StepLog], None] | None = None, system: FlowSystem | None = None) -> TrainResult:
    """Run the configured strategy; returns the checkpoint, per-step losses and live networks."""
    mcfg = mcfg or ModelConfig()
    system = system or build_system(mcfg, cfg.seed)
    root = Rng(cfg.seed)
    streams = {k: root.split(k) for k in ("data", "timesteps", "reparam", "indicator")}

    x_all = dataset.x
    img_all = dataset.images
    vel_params = system.velocity.parameters()
    src_params = system.source_parameters()
    opt = AdamW(vel_params + src_params, cfg)
    history: list[StepLog] = []

    stage1 = cfg.stage1_steps if cfg.strategy != "joint" else 0
    for step in range(1, cfg.steps + 1):
        in_stage1 = step <= stage1
        idx = streams["data"].integers(0, len(dataset), cfg.batch_size)
        x, z1 = x_all[idx], img_all[idx]
        lr = lr_at(step, cfg)
        losses = compute_losses(system, cfg, x, z1, streams, with_flow=not in_stage1)
        if in_stage1:
            active = src_params
        elif cfg.strategy == "two_stage":
            active = vel_params
        else:
            active = vel_params + src_params
        grads = backward(losses.tensor, active)
        if cfg.max_grad_norm is not None:
            clip_grads(grads, active, cfg.max_grad_norm)
        try:
            opt.step(active, grads, lr)
        except NumericFailure as err:
            raise NumericFailure(f"step {step}: {err} (losses {losses.as_row()})", where=step, detail=losses) from err
        losses.tensor = None
        entry = StepLog(step, lr, losses)
        history.append(entry)
        if progress is not None:
            progress(entry)

    if cfg.decoder_steps > 0:
        fit_decoder(system, cfg, Rng(cfg.seed).split("decoder"))
    ckpt = make_checkpoint(system, cfg, cfg.steps)
    return TrainResult(ckpt, history, system)


def fit_decoder(system: FlowSystem, cfg: TrainConfig, rng: Rng, table_seed: int | None = None) -> float:
    """Fit the latent->attribute decoder on source latents of the whole domain.

    Latents are drawn per the encoder mode, so the decoder also sees the
    spread around each posterior mean.  Returns the final accuracy on the means.
    """
    from .synthdata import DEFAULT_TABLE_SEED

    x = embedding_bank(table_seed if table_seed is not None else DEFAULT_TABLE_SEED)
    ids = np.array([a.ids() for a in DOMAIN])
    dec_cfg = replace(cfg, weight_decay=0.0, beta2=0.999)
    params = system.decoder.parameters()
    opt = AdamW(params, dec_cfg)
    for _ in range(cfg.decoder_steps):
        z = system.source_latent(x, cfg.mode, rng)
        loss = slot_cross_entropy(system.decoder, system.decoder(z), ids)
        grads = backward(loss, params)
        opt.step(params, grads, cfg.decoder_lr)
    with no_grad():
        mu = system.source_latent(x, cfg.mode, use_mean=True)
        pred = system.decoder.predict_ids(mu)
    return float((pred == ids).all(axis=1).mean())


# ---------------------------------------------------------------------------
# checkpoints

MAGIC = b"XFLW"
VERSION = 1


class CheckpointFormatError(ValueError):
    pass


def train_config_to_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)


def train_config_from_dict(d: dict) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ContractViolation(f"unknown train config key(s): {', '.join(unknown)}")
    return TrainConfig(**d)


def make_checkpoint(system: FlowSystem, cfg: TrainConfig, step: int) -> Checkpoint:
    tensors = {k: np.array(v, dtype=np.float32, copy=True) for k, v in system.state_dict().items()}
    config = {"train": train_config_to_dict(cfg), "model": system.model_config.to_dict()}
    return Checkpoint(tensors, config, step)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<II", VERSION, len(ckpt.tensors))
    for name in sorted(ckpt.tensors):
        # np.ascontiguousarray would promote 0-d tensors to shape (1,)
        arr = np.array(ckpt.tensors[name], dtype="<f4", order="C")
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<BB", 0, arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes()
    meta = json.dumps({"config": ckpt.config, "step": ckpt.step}, sort_keys=True).encode("utf-8")
    out += struct.pack("<I", len(meta)) + meta
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise CheckpointFormatError(f"{path}: truncated at byte {pos}")
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    if take(4) != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic, not a checkpoint")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {version}")
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        try:
            name = take(nlen).decode("utf-8")
        except UnicodeDecodeError as err:
            raise CheckpointFormatError(f"{path}: corrupt tensor name") from err
        dtype, rank = struct.unpack("<BB", take(2))
        if dtype != 0:
            raise CheckpointFormatError(f"{path}: unknown dtype code {dtype} for {name}")
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(dims)) if rank else 1
        tensors[name] = np.frombuffer(take(4 * n), dtype="<f4").reshape(dims).astype(np.float32)
    (mlen,) = struct.unpack("<I", take(4))
    try:
        meta = json.loads(take(mlen).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointFormatError(f"{path}: corrupt config block") from err
    if pos != len(raw):
        raise CheckpointFormatError(f"{path}: {len(raw) - pos} trailing bytes")
    return Checkpoint(tensors, meta["config"], int(meta.get("step", 0)))


def system_from_checkpoint(ckpt: Checkpoint, mcfg: ModelConfig | None = None) -> FlowSystem:
    """Rebuild networks and load weights.  A differing ``mcfg`` raises on shape mismatch."""
    stored = ModelConfig.from_dict(ckpt.config["model"])
    mcfg = mcfg or stored
    if tuple(mcfg.velocity.state_shape) != tuple(stored.velocity.state_shape):
        raise ContractViolation(
            f"checkpoint state shape {stored.velocity.state_shape} != requested {mcfg.velocity.state_shape}"
        )
    system = FlowSystem(mcfg, Rng(0))
    system.load_state_dict(ckpt.tensors)
    return system
