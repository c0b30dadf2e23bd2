"""Evaluation: oracle alignment, latent statistics, a pixel Fréchet distance,
interpolation smoothness and latent-arithmetic success."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .numerics import ContractViolation, Rng
from .sampler import GuidanceConfig, IntegratorConfig, integrate, interpolate_latents, latent_arithmetic
from .synthdata import (
    CARDINALITIES,
    DEFAULT_TABLE_SEED,
    DOMAIN,
    AttributeTuple,
    embed_tokens,
    is_matched,
    oracle_decode_batch,
)
from .varenc import EncoderMode

FEATURE_GRID = 8


def _image_batch(images) -> np.ndarray:
    arr = np.asarray(images if not isinstance(images, list) else np.stack(images), dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise ContractViolation(f"expected (N, C, H, W) images, got shape {arr.shape}")
    return arr


def decode_images(images) -> tuple[list[AttributeTuple], np.ndarray]:
    """Oracle attributes and template distances; images are clipped to [-1, 1] first."""
    imgs = np.clip(_image_batch(images), -1.0, 1.0)
    idx, dist = oracle_decode_batch(imgs)
    return [DOMAIN[int(i)] for i in idx], dist


def alignment_accuracy(generated, conditions: Sequence[AttributeTuple]) -> float:
    imgs = _image_batch(generated)
    if len(imgs) != len(conditions):
        raise ContractViolation(f"{len(imgs)} images but {len(conditions)} conditions")
    if len(imgs) == 0:
        raise ContractViolation("need at least one image")
    decoded, dist = decode_images(imgs)
    hits = [d == tuple(c) and is_matched(r) for d, c, r in zip(decoded, conditions, dist)]
    return float(np.mean(hits))


def image_features(images) -> np.ndarray:
    """Channel-mean gray image average-pooled to an 8x8 grid, flattened."""
    imgs = _image_batch(images)
    n, _, h, w = imgs.shape
    if h % FEATURE_GRID or w % FEATURE_GRID:
        raise ContractViolation(f"image size {(h, w)} not divisible by {FEATURE_GRID}")
    gray = imgs.mean(axis=1)
    ph, pw = h // FEATURE_GRID, w // FEATURE_GRID
    return gray.reshape(n, FEATURE_GRID, ph, FEATURE_GRID, pw).mean(axis=(2, 4)).reshape(n, -1)


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_from_features(fa: np.ndarray, fb: np.ndarray) -> float:
    fa = np.asarray(fa, dtype=np.float64)
    fb = np.asarray(fb, dtype=np.float64)
    d = fa.shape[1]
    if fb.shape[1] != d:
        raise ContractViolation("feature dimensions differ")
    if len(fa) < d + 1 or len(fb) < d + 1:
        raise ContractViolation(f"need at least {d + 1} samples per set, got {len(fa)} and {len(fb)}")
    mu_a, mu_b = fa.mean(0), fb.mean(0)
    ca, cb = np.cov(fa, rowvar=False), np.cov(fb, rowvar=False)
    # (Ca Cb)^{1/2} has the same trace as the PSD matrix (Ca^{1/2} Cb Ca^{1/2})^{1/2}
    ra = _psd_sqrt(ca)
    cross = _psd_sqrt(ra @ cb @ ra)
    val = float(np.sum((mu_a - mu_b) ** 2) + np.trace(ca) + np.trace(cb) - 2.0 * np.trace(cross))
    return max(val, 0.0)


def frechet_distance(images_a, images_b) -> float:
    return frechet_from_features(image_features(images_a), image_features(images_b))


def latent_gaussianity(z0, per_channel: bool = False) -> tuple[float, float, float]:
    """(max |mean|, min variance, max variance) across the set.

    Statistics are per latent element, or per channel (pooling spatial
    positions) when ``per_channel`` is set.
    """
    z = np.asarray(z0, dtype=np.float64)
    if z.ndim < 1 or len(z) < 2:
        raise ContractViolation("need at least 2 latents")
    if per_channel:
        if z.ndim < 3:
            raise ContractViolation("per-channel statistics need (N, C, ...) latents")
        z = np.moveaxis(z, 1, 0).reshape(z.shape[1], -1).T
    else:
        z = z.reshape(len(z), -1)
    mean = z.mean(axis=0)
    var = z.var(axis=0)
    return float(np.abs(mean).max()), float(var.min()), float(var.max())


def interp_steps(path) -> np.ndarray:
    frames = np.asarray(path if not isinstance(path, list) else np.stack(path), dtype=np.float64)
    if len(frames) < 2:
        raise ContractViolation("need at least 2 frames")
    flat = frames.reshape(len(frames), -1)
    return np.linalg.norm(np.diff(flat, axis=0), axis=1)


def interp_smoothness(path) -> float:
    """max consecutive-frame distance / mean consecutive distance.

    A path whose frames are all identical has no jumps and scores 1.0;
    callers that care can check :func:`interp_steps` for zero steps.
    """
    steps = interp_steps(path)
    mean = steps.mean()
    if mean == 0.0:
        return 1.0
    return float(steps.max() / mean)


# ---------------------------------------------------------------------------
# generation helpers shared by the evaluation and the command line


@dataclass(frozen=True)
class SamplingSettings:
    omega: float = 3.0
    steps: int = 50
    method: str = "midpoint"
    guidance: bool = True

    @property
    def guidance_config(self) -> GuidanceConfig:
        return GuidanceConfig(omega=self.omega, enabled=self.guidance)

    @property
    def integrator(self) -> IntegratorConfig:
        return IntegratorConfig(method=self.method, steps=self.steps)


def source_batch(attrs: Sequence[AttributeTuple], table_seed: int = DEFAULT_TABLE_SEED) -> np.ndarray:
    return np.stack([embed_tokens(a, table_seed) for a in attrs])


def generate_from_latents(system, z0: np.ndarray, settings: SamplingSettings, indicator: int = 1,
                          chunk: int = 128) -> np.ndarray:
    out = [integrate(system.velocity, z0[i:i + chunk], settings.guidance_config, settings.integrator, indicator)
           for i in range(0, len(z0), chunk)]
    return np.concatenate(out, axis=0)


def generate(system, attrs: Sequence[AttributeTuple], settings: SamplingSettings, rng: Rng,
             mode: EncoderMode, table_seed: int = DEFAULT_TABLE_SEED) -> np.ndarray:
    """Conditional samples: z0 drawn per the encoder mode, then the guided forward ODE."""
    z0 = system.source_latent(source_batch(attrs, table_seed), mode, rng)
    return generate_from_latents(system, z0, settings)


def generate_unconditional(system, n: int, settings: SamplingSettings, rng: Rng, mode: EncoderMode,
                           table_seed: int = DEFAULT_TABLE_SEED) -> np.ndarray:
    """Indicator-0 samples, unguided.

    Starting points are source latents of random captions, i.e. draws from the
    same source distribution the unconditional branch was trained on.
    """
    attrs = random_attrs(rng.split("captions"), n)
    z0 = system.source_latent(source_batch(attrs, table_seed), mode, rng.split("z0"))
    s = SamplingSettings(omega=1.0, steps=settings.steps, method=settings.method, guidance=False)
    return generate_from_latents(system, z0, s, indicator=0)


def random_attrs(rng: Rng, n: int) -> list[AttributeTuple]:
    return [DOMAIN[int(i)] for i in rng.integers(0, len(DOMAIN), n)]


def arithmetic_case(rng: Rng) -> tuple[AttributeTuple, AttributeTuple, AttributeTuple, AttributeTuple]:
    """(a, b, c, expected) with b and c differing only in one slot s where c agrees with a.

    Adding b - c to a should move slot s of a to b's value.
    """
    a = DOMAIN[int(rng.integers(0, len(DOMAIN)))]
    slot = int(rng.integers(0, len(CARDINALITIES)))
    c = DOMAIN[int(rng.integers(0, len(DOMAIN)))].replace_slot(slot, a.ids()[slot])
    others = [v for v in range(CARDINALITIES[slot]) if v != a.ids()[slot]]
    new = others[int(rng.integers(0, len(others)))]
    b = c.replace_slot(slot, new)
    return a, b, c, a.replace_slot(slot, new)


def arithmetic_success(system, n_cases: int, rng: Rng, settings: SamplingSettings = SamplingSettings(),
                       table_seed: int = DEFAULT_TABLE_SEED) -> float:
    """Fraction of single-attribute edits mu(a) + mu(b) - mu(c) that decode to the expected tuple."""
    if n_cases < 1:
        raise ContractViolation("n_cases must be >= 1")
    cases = [arithmetic_case(rng) for _ in range(n_cases)]
    flat = [t for a, b, c, _ in cases for t in (a, b, c)]
    mu = system.source_latent(source_batch(flat, table_seed), EncoderMode("plain"), use_mean=True)
    z0 = np.stack([latent_arithmetic([(1.0, mu[3 * i]), (1.0, mu[3 * i + 1]), (-1.0, mu[3 * i + 2])])
                   for i in range(n_cases)])
    imgs = generate_from_latents(system, z0, settings)
    return alignment_accuracy(imgs, [case[3] for case in cases])


def interpolation_paths(system, pairs: Sequence[tuple[AttributeTuple, AttributeTuple]], k: int,
                        settings: SamplingSettings, table_seed: int = DEFAULT_TABLE_SEED) -> np.ndarray:
    """Generated-image paths between posterior means; shape (len(pairs), k, C, H, W)."""
    ends = [t for p in pairs for t in p]
    mu = system.source_latent(source_batch(ends, table_seed), EncoderMode("plain"), use_mean=True)
    z0 = np.stack([z for i in range(len(pairs)) for z in interpolate_latents(mu[2 * i], mu[2 * i + 1], k)])
    imgs = generate_from_latents(system, z0, settings)
    return imgs.reshape((len(pairs), k) + imgs.shape[1:])


# ---------------------------------------------------------------------------
# report


@dataclass
class EvalReport:
    alignment_accuracy: float
    frechet: float
    latent_mean_absmax: float
    latent_var_range: tuple[float, float]
    interp_smoothness: float
    arithmetic_success: float
    n_samples: int
    n_arith_cases: int
    n_interp_pairs: int
    seed: int
    omega: float
    steps: int
    method: str

    def __post_init__(self):
        vals = [self.alignment_accuracy, self.frechet, self.latent_mean_absmax, *self.latent_var_range,
                self.interp_smoothness, self.arithmetic_success]
        if not np.isfinite(vals).all():
            raise ContractViolation("evaluation produced a non-finite metric")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["latent_var_range"] = list(self.latent_var_range)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def evaluate(system, eval_images: np.ndarray, mode: EncoderMode, seed: int = 0, n_samples: int = 128,
             n_arith: int = 64, n_interp: int = 16, k: int = 9, settings: SamplingSettings = SamplingSettings(),
             table_seed: int = DEFAULT_TABLE_SEED) -> EvalReport:
    root = Rng(seed).split("eval")
    attrs = random_attrs(root.split("conditions"), n_samples)
    imgs = generate(system, attrs, settings, root.split("z0"), mode, table_seed)
    acc = alignment_accuracy(imgs, attrs)
    fd = frechet_distance(imgs, eval_images)

    lat_rng = root.split("latents")
    z0 = system.source_latent(source_batch(DOMAIN, table_seed), mode, lat_rng)
    mean_absmax, vmin, vmax = latent_gaussianity(z0)

    pr = root.split("interp")
    pairs = list(zip(random_attrs(pr, n_interp), random_attrs(pr, n_interp)))
    paths = interpolation_paths(system, pairs, k, settings, table_seed)
    smooth = max(interp_smoothness(p) for p in paths)

    arith = arithmetic_success(system, n_arith, root.split("arith"), settings, table_seed)
    return EvalReport(acc, fd, mean_absmax, (vmin, vmax), smooth, arith, n_samples, n_arith, n_interp,
                      seed, settings.omega, settings.steps, settings.method)
