"""Finite-difference gradient checks over every loss of the system, on a tiny float64 build."""
from __future__ import annotations

from dataclasses import replace
from typing import Callable

import numpy as np

from .losses import contrastive_loss, fm_loss, kl_loss, recon_loss
from .model import VelocityNetConfig
from .numerics import GradReport, Rng, Tensor, grad_check
from .synthdata import DOMAIN, embed_tokens
from .trainer import FlowSystem, ModelConfig, TrainConfig, compute_losses
from .varenc import EncoderConfig, slot_cross_entropy

TINY_STATE = (3, 8, 8)


def tiny_model_config(state_shape=TINY_STATE) -> ModelConfig:
    vel = VelocityNetConfig(state_shape=state_shape, patch=4, embed_dim=16, depth=1, heads=2, time_dim=8, mlp_ratio=2)
    enc = EncoderConfig(latent_shape=state_shape, dim=16, depth=1, heads=2, target_dim=8, target_patch=4,
                        decoder_hidden=16, mlp_ratio=2)
    return ModelConfig(vel, enc)


def _tiny_batch(rng: Rng, b: int, state_shape) -> tuple[np.ndarray, np.ndarray]:
    idx = rng.integers(0, len(DOMAIN), b)
    x = np.stack([embed_tokens(DOMAIN[int(i)]) for i in idx]).astype(np.float64)
    z1 = np.tanh(rng.normal((b,) + tuple(state_shape)))
    return x, z1


def gradcheck_suite(seed: int = 0, batch: int = 2, max_coords: int = 6, tol: float = 1e-4, eps: float = 1e-4,
                    state_shape=TINY_STATE) -> list[tuple[str, GradReport]]:
    """Run grad_check on each module loss and on the full objective.

    Returns (name, report) pairs; every report should have ``passed``.
    """
    state_shape = tuple(state_shape)
    mcfg = tiny_model_config(state_shape)
    system = FlowSystem(mcfg, Rng(seed).split("gradcheck")).astype(np.float64)
    system._source_proj = system._source_proj.astype(np.float64)
    # move away from the small-std init so gradients are well above finite-difference noise
    jitter = Rng(seed).split("jitter")
    for _, p in system.named_parameters():
        p.data = np.asarray(p.data + 0.1 * jitter.normal(p.shape))
    rng = Rng(seed).split("data")
    x, z1 = _tiny_batch(rng, batch, state_shape)
    noise = rng.normal((batch,) + state_shape)
    t = np.array([0.3, 0.8] * batch)[:batch]
    ind = np.array([1, 0] * batch)[:batch]
    v_hat = rng.normal((batch,) + state_shape)

    def post():
        return system.encoder(x)

    def z0_of():
        p = post()
        return p.mu + p.sigma * Tensor(noise)

    cases: list[tuple[str, Callable[[], Tensor], list]] = [
        ("velocity/fm", lambda: fm_loss(system.velocity(z1, t, ind), v_hat),
         system.velocity.parameters()),
        ("encoder/kl", lambda: kl_loss(post().mu, post().log_sigma),
         system.encoder.parameters()),
        ("encoder+target/contrast", lambda: contrastive_loss(z0_of(), system.target_encoder(z1),
                                                            system.contrast_head.log_tau),
         system.encoder.parameters() + system.target_encoder.parameters() + system.contrast_head.parameters()),
        ("reconstructor/recon", lambda: recon_loss(system.reconstructor(z0_of()), Tensor(x)),
         system.encoder.parameters() + system.reconstructor.parameters()),
        ("decoder/slot_ce", lambda: slot_cross_entropy(
            system.decoder, system.decoder(z0_of()), np.array([DOMAIN[i].ids() for i in range(batch)])),
         system.decoder.parameters()),
    ]

    base = TrainConfig(batch_size=batch, uncond_rate=0.5, seed=seed)
    for enc_mode in ("contrast_target", "contrast_source", "recon"):
        cfg = replace(base, enc_mode=enc_mode)

        def composite(cfg=cfg):
            root = Rng(seed).split("streams")
            streams = {k: root.split(k) for k in ("data", "timesteps", "reparam", "indicator")}
            return compute_losses(system, cfg, x, z1, streams).tensor

        params = [p for p in system.velocity.parameters() + system.source_parameters()]
        cases.append((f"composite/{enc_mode}", composite, params))

    out = []
    for i, (name, f, params) in enumerate(cases):
        report = grad_check(f, params, eps=eps, max_coords=max_coords, tol=tol, rng=Rng(seed).split(i))
        out.append((name, report))
    return out
