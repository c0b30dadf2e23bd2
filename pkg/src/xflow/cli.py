"""Command line: train, sample, interp, arith, invert, eval, gradcheck.

Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import re
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .metrics import (
    SamplingSettings,
    decode_images,
    evaluate,
    generate,
    generate_from_latents,
    generate_unconditional,
    interp_smoothness,
    interp_steps,
    interpolation_paths,
    source_batch,
)
from .model import VelocityNetConfig
from .numerics import ContractViolation, NumericFailure, Rng
from .sampler import IntegratorConfig, invert, latent_arithmetic
from .synthdata import DEFAULT_TABLE_SEED, IMAGE_SHAPE, AttributeTuple, is_matched, make_split, parse_attrs
from .trainer import (
    CheckpointFormatError,
    ModelConfig,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    system_from_checkpoint,
    train,
    train_config_from_dict,
    train_config_to_dict,
)
from .varenc import EncoderConfig, EncoderMode

log = logging.getLogger("xflow")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    """Bad flags, config or input files; maps to exit code 2."""


# ---------------------------------------------------------------------------
# PPM


def to_bytes(image: np.ndarray) -> np.ndarray:
    """(3, H, W) in [-1, 1] -> (H, W, 3) uint8 via round(255 (x + 1) / 2), clamped."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ContractViolation(f"expected a (3, H, W) image, got {img.shape}")
    q = np.clip(np.round(255.0 * (img + 1.0) / 2.0), 0, 255).astype(np.uint8)
    return q.transpose(1, 2, 0)


def ppm_bytes(image: np.ndarray) -> bytes:
    rgb = to_bytes(image)
    h, w, _ = rgb.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes()


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    Path(path).write_bytes(ppm_bytes(image))


def read_ppm(path: str | Path) -> np.ndarray:
    """Parse a binary P6 file (maxval 255) into a (3, H, W) array in [-1, 1]."""
    try:
        raw = Path(path).read_bytes()
    except OSError as err:
        raise UsageError(f"cannot read image {path}: {err}") from err
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise UsageError(f"{path}: truncated PPM header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace byte after maxval
    if tokens[0] != b"P6":
        raise UsageError(f"{path}: not a binary PPM (P6) file")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as err:
        raise UsageError(f"{path}: malformed PPM header") from err
    if maxval != 255:
        raise UsageError(f"{path}: only maxval 255 is supported")
    body = raw[pos:]
    if len(body) != 3 * w * h:
        raise UsageError(f"{path}: expected {3 * w * h} pixel bytes, found {len(body)}")
    rgb = np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).transpose(2, 0, 1)
    return rgb.astype(np.float32) / 127.5 - 1.0


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class DataConfig:
    n_train: int = 4096
    n_eval: int = 288
    seed: int = 0
    table_seed: int = DEFAULT_TABLE_SEED


@dataclass(frozen=True)
class SamplerDefaults:
    omega: float = 3.0
    steps: int = 50
    method: str = "midpoint"


@dataclass(frozen=True)
class CliConfig:
    train: TrainConfig
    data: DataConfig
    model: ModelConfig
    sampler: SamplerDefaults
    out_dir: str | None = None

    def to_dict(self) -> dict:
        return {
            "train": train_config_to_dict(self.train),
            "data": asdict(self.data),
            "model": self.model.to_dict(),
            "sampler": asdict(self.sampler),
            "out_dir": self.out_dir,
        }


def _check_fields(section: str, given: dict, cls) -> dict:
    if not isinstance(given, dict):
        raise UsageError(f"{section}: expected a JSON object")
    known = {f.name: f for f in fields(cls)}
    out = {}
    defaults = cls()
    for key, val in given.items():
        if key not in known:
            raise UsageError(f"{section}.{key}: unknown key (valid: {', '.join(sorted(known))})")
        default = getattr(defaults, key)
        ok = True
        if isinstance(default, bool):
            ok = isinstance(val, bool)
        elif isinstance(default, int):
            ok = isinstance(val, int) and not isinstance(val, bool)
        elif isinstance(default, float):
            ok = isinstance(val, (int, float)) and not isinstance(val, bool)
        elif isinstance(default, str):
            ok = isinstance(val, str)
        elif isinstance(default, tuple):
            ok = isinstance(val, list) and all(isinstance(v, int) for v in val)
            val = tuple(val) if ok else val
        elif default is None:
            ok = val is None or isinstance(val, (int, float)) and not isinstance(val, bool)
        if not ok:
            raise UsageError(f"{section}.{key}: bad value {val!r} (expected {type(default).__name__})")
        out[key] = float(val) if isinstance(default, float) else val
    return out


def parse_config(doc: dict) -> CliConfig:
    """Validate every key before any work starts."""
    if not isinstance(doc, dict):
        raise UsageError("config: expected a JSON object")
    sections = {"train", "data", "model", "sampler", "out_dir"}
    for key in doc:
        if key not in sections:
            raise UsageError(f"{key}: unknown key (valid: {', '.join(sorted(sections))})")
    model = doc.get("model", {})
    if not isinstance(model, dict):
        raise UsageError("model: expected a JSON object")
    for key in model:
        if key not in ("velocity", "encoder"):
            raise UsageError(f"model.{key}: unknown key (valid: encoder, velocity)")
    try:
        tcfg = TrainConfig(**_check_fields("train", doc.get("train", {}), TrainConfig))
        dcfg = DataConfig(**_check_fields("data", doc.get("data", {}), DataConfig))
        vel = _check_fields("model.velocity", model.get("velocity", {}), VelocityNetConfig)
        enc = _check_fields("model.encoder", model.get("encoder", {}), EncoderConfig)
        shape = tuple(vel.get("state_shape", enc.get("latent_shape", IMAGE_SHAPE)))
        if shape != IMAGE_SHAPE:
            raise UsageError(f"model.velocity.state_shape: must equal the image shape {list(IMAGE_SHAPE)}")
        vel["state_shape"], enc["latent_shape"] = shape, shape
        mcfg = ModelConfig(VelocityNetConfig(**vel), EncoderConfig(**enc))
        scfg = SamplerDefaults(**_check_fields("sampler", doc.get("sampler", {}), SamplerDefaults))
        IntegratorConfig(method=scfg.method, steps=scfg.steps)
    except ContractViolation as err:
        raise UsageError(f"invalid config: {err}") from err
    if dcfg.n_train < 1 or dcfg.n_eval < 1:
        raise UsageError("data: n_train and n_eval must be >= 1")
    out_dir = doc.get("out_dir")
    if out_dir is not None and not isinstance(out_dir, str):
        raise UsageError("out_dir: expected a string")
    return CliConfig(tcfg, dcfg, mcfg, scfg, out_dir)


def load_config(path: str) -> CliConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as err:
        raise UsageError(f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise UsageError(f"config {path} is not valid JSON: {err}") from err
    return parse_config(doc)


# ---------------------------------------------------------------------------
# helpers


def _out_dir(path: str | None) -> Path:
    if not path:
        raise UsageError("--out is required")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(path: str):
    try:
        ckpt = load_checkpoint(path)
    except OSError as err:
        raise UsageError(f"cannot read checkpoint {path}: {err}") from err
    except CheckpointFormatError as err:
        raise UsageError(str(err)) from err
    system = system_from_checkpoint(ckpt)
    tcfg = train_config_from_dict(ckpt.config["train"])
    data = ckpt.config.get("data", {})
    sampler = ckpt.config.get("sampler", {})
    return system, tcfg, data, sampler


def _attrs(text: str) -> AttributeTuple:
    try:
        return parse_attrs(text)
    except ContractViolation as err:
        raise UsageError(str(err)) from err


def _settings(args, defaults: dict) -> SamplingSettings:
    omega = args.omega if args.omega is not None else defaults.get("omega", 3.0)
    steps = args.steps if args.steps is not None else defaults.get("steps", 50)
    method = args.method if args.method is not None else defaults.get("method", "midpoint")
    if steps < 1:
        raise UsageError("--steps must be >= 1")
    return SamplingSettings(omega=float(omega), steps=int(steps), method=method,
                            guidance=not getattr(args, "no_guidance", False))


def _decoded_entry(image: np.ndarray) -> dict:
    (attrs,), dist = decode_images(image[None])
    return {"decoded": attrs.format(), "distance": float(dist[0]), "matched": bool(is_matched(dist[0]))}


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


TERM_RE = re.compile(r"^\s*([+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)\s*:(.+)$")


def parse_terms(text: str) -> list[tuple[float, AttributeTuple]]:
    """``"+1.0:attrs;-1.0:attrs"`` -> [(coef, attrs), ...]."""
    terms = []
    for token in text.split(";"):
        if not token.strip():
            raise UsageError(f"empty term in {text!r}")
        m = TERM_RE.match(token)
        if not m:
            raise UsageError(f"malformed term {token.strip()!r}: expected <signed number>:<attrs>")
        try:
            attrs = parse_attrs(m.group(2).strip())
        except ContractViolation as err:
            raise UsageError(f"term {token.strip()!r}: {err}") from err
        terms.append((float(m.group(1)), attrs))
    return terms


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(args.out or cfg.out_dir)
    resolved = cfg.to_dict()
    resolved["out_dir"] = str(out)
    _write_json(out / "config.json", resolved)
    train_split, _ = make_split(Rng(cfg.data.seed), cfg.data.n_train, cfg.data.n_eval, cfg.data.table_seed)

    rows = []

    def progress(entry):
        rows.append(entry)
        if entry.step % args.log_every == 0 or entry.step == cfg.train.steps:
            r = entry.losses.as_row()
            log.info("step %d  total %.4f  fm %.4f  enc %.4f  kl %.4f", entry.step, r["total"], r["l_fm"], r["l_enc"], r["l_kl"])

    try:
        result = train(cfg.train, train_split, cfg.model, progress=progress)
    finally:
        with open(out / "loss.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "l_fm", "l_enc", "l_kl", "total", "lr"])
            for e in rows:
                r = e.losses.as_row()
                w.writerow([e.step, repr(r["l_fm"]), repr(r["l_enc"]), repr(r["l_kl"]), repr(r["total"]), repr(float(e.lr))])
    ckpt = result.checkpoint
    ckpt.config["data"] = asdict(cfg.data)
    ckpt.config["sampler"] = asdict(cfg.sampler)
    save_checkpoint(ckpt, out / "checkpoint.xflw")
    log.info("wrote %s", out / "checkpoint.xflw")
    return EXIT_OK


def cmd_sample(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    if (args.attrs is None) == (not args.uncond):
        raise UsageError("give exactly one of --attrs or --uncond")
    attrs = _attrs(args.attrs) if args.attrs is not None else None
    system, tcfg, data, sdef = _load(args.ckpt)
    settings = _settings(args, sdef)
    out = _out_dir(args.out)
    rng = Rng(args.seed).split("sample")
    table_seed = data.get("table_seed", DEFAULT_TABLE_SEED)
    if attrs is None:
        images = generate_unconditional(system, args.n, settings, rng, tcfg.mode, table_seed)
    else:
        images = generate(system, [attrs] * args.n, settings, rng, tcfg.mode, table_seed)
    entries = []
    for i, img in enumerate(images):
        name = f"sample_{i:03d}.ppm"
        write_ppm(out / name, img)
        e = {"file": name, **_decoded_entry(img)}
        if attrs is not None:
            e["agrees"] = e["matched"] and e["decoded"] == attrs.format()
        entries.append(e)
    manifest = {
        "command": "sample",
        "inputs": {"ckpt": str(args.ckpt), "attrs": attrs.format() if attrs else None, "uncond": bool(args.uncond),
                   "n": args.n, "omega": settings.omega, "guidance": settings.guidance, "steps": settings.steps,
                   "method": settings.method, "seed": args.seed},
        "images": entries,
    }
    if attrs is not None:
        manifest["agreement"] = float(np.mean([e["agrees"] for e in entries]))
    _write_json(out / "manifest.json", manifest)
    return EXIT_OK


def cmd_interp(args) -> int:
    if args.k < 2:
        raise UsageError("--k must be >= 2")
    a, b = _attrs(args.from_attrs), _attrs(args.to_attrs)
    system, _, data, sdef = _load(args.ckpt)
    settings = _settings(args, sdef)
    out = _out_dir(args.out)
    path = interpolation_paths(system, [(a, b)], args.k, settings, data.get("table_seed", DEFAULT_TABLE_SEED))[0]
    frames = []
    for i, img in enumerate(path):
        name = f"frame_{i:02d}.ppm"
        write_ppm(out / name, img)
        frames.append({"file": name, **_decoded_entry(img)})
    steps = interp_steps(path)
    _write_json(out / "interp.json", {
        "command": "interp",
        "inputs": {"ckpt": str(args.ckpt), "from": a.format(), "to": b.format(), "k": args.k,
                   "omega": settings.omega, "steps": settings.steps, "method": settings.method},
        "frames": frames,
        "step_distances": [float(s) for s in steps],
        "smoothness": interp_smoothness(path),
        "zero_step": bool((steps == 0).any()),
    })
    return EXIT_OK


def cmd_arith(args) -> int:
    terms = parse_terms(args.terms)
    system, _, data, sdef = _load(args.ckpt)
    settings = _settings(args, sdef)
    out = _out_dir(args.out)
    mu = system.source_latent(source_batch([t for _, t in terms], data.get("table_seed", DEFAULT_TABLE_SEED)),
                              EncoderMode("plain"), use_mean=True)
    z0 = latent_arithmetic([(c, mu[i]) for i, (c, _) in enumerate(terms)])
    img = generate_from_latents(system, z0[None], settings)[0]
    write_ppm(out / "arith.ppm", img)
    _write_json(out / "arith.json", {
        "command": "arith",
        "inputs": {"ckpt": str(args.ckpt), "terms": [[c, t.format()] for c, t in terms],
                   "omega": settings.omega, "steps": settings.steps, "method": settings.method},
        "file": "arith.ppm",
        **_decoded_entry(img),
    })
    return EXIT_OK


def cmd_invert(args) -> int:
    image = read_ppm(args.image)
    system, _, data, _ = _load(args.ckpt)
    if image.shape != tuple(system.velocity.config.state_shape):
        raise UsageError(f"image shape {image.shape} != model state shape {system.velocity.config.state_shape}")
    if args.steps < 1:
        raise UsageError("--steps must be >= 1")
    out = _out_dir(args.out)
    z0 = invert(system.velocity, image[None], IntegratorConfig(method=args.method, steps=args.steps))
    ids = system.decoder.predict_ids(z0)[0]
    attrs = AttributeTuple.from_ids(ids)
    # confidence: how far the recovered latent sits from that caption's posterior mean
    mu = system.source_latent(source_batch([attrs], data.get("table_seed", DEFAULT_TABLE_SEED)),
                              EncoderMode("plain"), use_mean=True)[0]
    dist = float(np.linalg.norm(z0[0] - mu))
    logits = system.decoder.split_logits(system.decoder(z0).data[0])
    probs = [float(np.max(np.exp(g - g.max()) / np.exp(g - g.max()).sum())) for g in logits]
    _write_json(out / "invert.json", {
        "command": "invert",
        "inputs": {"ckpt": str(args.ckpt), "image": str(args.image), "steps": args.steps, "method": args.method},
        "recovered": attrs.format(),
        "confidence_distance": dist,
        "relative_distance": dist / max(float(np.linalg.norm(mu)), 1e-12),
        "slot_probabilities": probs,
    })
    return EXIT_OK


def cmd_eval(args) -> int:
    system, tcfg, data, sdef = _load(args.ckpt)
    settings = _settings(args, sdef)
    dcfg = DataConfig(**data) if data else DataConfig()
    _, eval_split = make_split(Rng(dcfg.seed), dcfg.n_train, dcfg.n_eval, dcfg.table_seed)
    report = evaluate(system, eval_split.images, tcfg.mode, seed=args.seed, n_samples=args.n,
                      n_arith=args.arith_cases, n_interp=args.interp_pairs, settings=settings,
                      table_seed=dcfg.table_seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json() + "\n")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .checks import gradcheck_suite

    ok = True
    for name, rep in gradcheck_suite(seed=args.seed):
        status = "PASS" if rep.passed else "FAIL"
        print(f"{status} {name} max_rel_error={rep.max_rel_error:.3e}")
        ok &= rep.passed
    return EXIT_OK if ok else EXIT_NUMERIC


# ---------------------------------------------------------------------------


def _sampling_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--omega", type=float, default=None, help="guidance scale (default from checkpoint, 3.0)")
    p.add_argument("--steps", type=int, default=None, help="integration steps (default 50)")
    p.add_argument("--method", choices=("euler", "midpoint"), default=None)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xflow", description="cross-modal flow matching on a synthetic domain")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", default=None)
    t.add_argument("--log-every", type=int, default=100)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="generate images for a caption")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--attrs", default=None, help='e.g. "shape=circle,color=red,cell=1:1,size=large"')
    s.add_argument("--uncond", action="store_true", help="indicator-0 sampling instead of --attrs")
    s.add_argument("--n", type=int, default=4)
    _sampling_flags(s)
    s.add_argument("--no-guidance", action="store_true", help="conditional velocity only")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    i = sub.add_parser("interp", help="interpolate between two captions")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--from", dest="from_attrs", required=True)
    i.add_argument("--to", dest="to_attrs", required=True)
    i.add_argument("--k", type=int, default=9)
    _sampling_flags(i)
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_interp)

    a = sub.add_parser("arith", help="generate from a signed sum of caption latents")
    a.add_argument("--ckpt", required=True)
    a.add_argument("--terms", required=True, help='e.g. "+1.0:<attrs>;+1.0:<attrs>;-1.0:<attrs>"')
    _sampling_flags(a)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_arith)

    v = sub.add_parser("invert", help="recover a caption from a PPM image")
    v.add_argument("--ckpt", required=True)
    v.add_argument("--image", required=True)
    v.add_argument("--steps", type=int, default=100)
    v.add_argument("--method", choices=("euler", "midpoint"), default="midpoint")
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_invert)

    e = sub.add_parser("eval", help="write an evaluation report")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--out", required=True, help="report JSON path")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--n", type=int, default=128)
    e.add_argument("--arith-cases", type=int, default=64)
    e.add_argument("--interp-pairs", type=int, default=16)
    _sampling_flags(e)
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference check of every loss")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except NumericFailure as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except ContractViolation as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
