"""Procedural captions-and-pictures domain with an exact nearest-template decoder.

A "caption" is an attribute tuple (shape, color, grid cell, size).  Its paired
image is a deterministic 3x32x32 rendering in [-1, 1]; its source embedding is
an 8x16 token matrix built from a frozen random table.
"""
from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .numerics import ContractViolation, Rng

SHAPES = ("circle", "square", "triangle", "cross")
COLORS = ("red", "green", "blue", "yellow")
CELLS = tuple((r, c) for r in range(3) for c in range(3))
SIZES = ("small", "large")
SLOTS = ("shape", "color", "cell", "size")
CARDINALITIES = (len(SHAPES), len(COLORS), len(CELLS), len(SIZES))

IMAGE_SHAPE = (3, 32, 32)
N_TOKENS, TOKEN_DIM = 8, 16
RADIUS = {"small": 4, "large": 6}
RGB = {
    "red": (1.0, -1.0, -1.0),
    "green": (-1.0, 1.0, -1.0),
    "blue": (-1.0, -1.0, 1.0),
    "yellow": (1.0, 1.0, -1.0),
}
DEFAULT_TABLE_SEED = 1234


class AttributeTuple(NamedTuple):
    shape: str
    color: str
    cell: tuple[int, int]
    size: str

    def ids(self) -> tuple[int, int, int, int]:
        return (
            SHAPES.index(self.shape),
            COLORS.index(self.color),
            CELLS.index(tuple(self.cell)),
            SIZES.index(self.size),
        )

    @classmethod
    def from_ids(cls, ids) -> "AttributeTuple":
        s, c, k, z = (int(i) for i in ids)
        return cls(SHAPES[s], COLORS[c], CELLS[k], SIZES[z])

    def format(self) -> str:
        r, c = self.cell
        return f"shape={self.shape},color={self.color},cell={r}:{c},size={self.size}"

    def replace_slot(self, slot: int, value_id: int) -> "AttributeTuple":
        ids = list(self.ids())
        ids[slot] = value_id
        return AttributeTuple.from_ids(ids)


DOMAIN: tuple[AttributeTuple, ...] = tuple(
    AttributeTuple(s, c, k, z) for s, c, k, z in itertools.product(SHAPES, COLORS, CELLS, SIZES)
)
DOMAIN_INDEX = {a: i for i, a in enumerate(DOMAIN)}


def parse_attrs(text: str) -> AttributeTuple:
    """Parse ``shape=circle,color=red,cell=1:1,size=large``."""
    fields = {}
    for part in text.split(","):
        part = part.strip()
        if "=" not in part:
            raise ContractViolation(f"malformed attribute {part!r}; expected key=value")
        key, val = (s.strip() for s in part.split("=", 1))
        if key not in SLOTS:
            raise ContractViolation(f"unknown attribute key {key!r}; valid keys: {', '.join(SLOTS)}")
        if key in fields:
            raise ContractViolation(f"attribute {key!r} given twice")
        fields[key] = val
    missing = [k for k in SLOTS if k not in fields]
    if missing:
        raise ContractViolation(f"missing attribute(s): {', '.join(missing)}")
    if fields["shape"] not in SHAPES:
        raise ContractViolation(f"unknown shape {fields['shape']!r}; valid: {', '.join(SHAPES)}")
    if fields["color"] not in COLORS:
        raise ContractViolation(f"unknown color {fields['color']!r}; valid: {', '.join(COLORS)}")
    if fields["size"] not in SIZES:
        raise ContractViolation(f"unknown size {fields['size']!r}; valid: {', '.join(SIZES)}")
    try:
        r, c = (int(v) for v in fields["cell"].split(":"))
    except ValueError:
        raise ContractViolation(f"malformed cell {fields['cell']!r}; expected row:col") from None
    if (r, c) not in CELLS:
        valid = ", ".join(f"{a}:{b}" for a, b in CELLS)
        raise ContractViolation(f"unknown cell {r}:{c}; valid: {valid}")
    return AttributeTuple(fields["shape"], fields["color"], (r, c), fields["size"])


def _mask(shape: str, cy: float, cx: float, radius: int) -> np.ndarray:
    ys, xs = np.mgrid[0:32, 0:32] + 0.5
    dy, dx = ys - cy, xs - cx
    if shape == "circle":
        return dx * dx + dy * dy <= radius * radius
    if shape == "square":
        return (np.abs(dx) <= radius) & (np.abs(dy) <= radius)
    if shape == "triangle":
        # apex up; half-width grows linearly from 0 at the top to radius at the base
        frac = (dy + radius) / (2.0 * radius)
        return (frac >= 0) & (frac <= 1) & (np.abs(dx) <= radius * frac)
    if shape == "cross":
        arm = max(1.0, radius / 3.0)
        return ((np.abs(dx) <= arm) & (np.abs(dy) <= radius)) | ((np.abs(dy) <= arm) & (np.abs(dx) <= radius))
    raise ContractViolation(f"unknown shape {shape!r}")


def render(attrs: AttributeTuple) -> np.ndarray:
    """Rasterize one shape on a white background; no anti-aliasing."""
    return _render_cached(AttributeTuple(*attrs)).copy()


@lru_cache(maxsize=None)
def _render_cached(attrs: AttributeTuple) -> np.ndarray:
    cell = 32.0 / 3.0
    r, c = attrs.cell
    mask = _mask(attrs.shape, (r + 0.5) * cell, (c + 0.5) * cell, RADIUS[attrs.size])
    img = np.ones(IMAGE_SHAPE, dtype=np.float32)
    for ch, val in enumerate(RGB[attrs.color]):
        img[ch][mask] = val
    return img


@lru_cache(maxsize=1)
def template_bank() -> np.ndarray:
    """All 288 renders, shape (288, 3, 32, 32), in enumeration order."""
    bank = np.stack([_render_cached(a) for a in DOMAIN])
    bank.setflags(write=False)
    return bank


@lru_cache(maxsize=1)
def min_template_distance() -> float:
    flat = template_bank().reshape(len(DOMAIN), -1).astype(np.float64)
    sq = (flat * flat).sum(1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * flat @ flat.T
    np.fill_diagonal(d2, np.inf)
    return float(np.sqrt(max(d2.min(), 0.0)))


def unmatched_threshold() -> float:
    return 0.5 * min_template_distance()


def oracle_decode_batch(images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-template indices and L2 distances for a batch of images."""
    imgs = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
    bank = template_bank().reshape(len(DOMAIN), -1).astype(np.float64)
    d2 = (imgs * imgs).sum(1)[:, None] + (bank * bank).sum(1)[None, :] - 2.0 * imgs @ bank.T
    idx = np.argmin(d2, axis=1)  # first minimum = enumeration-order tie break
    dist = np.linalg.norm(imgs - bank[idx], axis=1)
    return idx, dist


def oracle_decode(pixels: np.ndarray) -> tuple[AttributeTuple, float]:
    pixels = np.asarray(pixels)
    if pixels.shape != IMAGE_SHAPE:
        raise ContractViolation(f"expected image shape {IMAGE_SHAPE}, got {pixels.shape}")
    idx, dist = oracle_decode_batch(pixels[None])
    return DOMAIN[int(idx[0])], float(dist[0])


def is_matched(distance: float) -> bool:
    return distance <= unmatched_threshold()


@lru_cache(maxsize=8)
def token_table(table_seed: int = DEFAULT_TABLE_SEED) -> tuple[np.ndarray, ...]:
    rng = Rng(table_seed).split("tokens")
    return tuple(rng.normal((n, TOKEN_DIM)).astype(np.float32) for n in CARDINALITIES)


def embed_tokens(attrs: AttributeTuple, table_seed: int = DEFAULT_TABLE_SEED) -> np.ndarray:
    """Frozen stand-in for a language-model embedding: (8 tokens, 16 dims)."""
    table = token_table(table_seed)
    x = np.zeros((N_TOKENS, TOKEN_DIM), dtype=np.float32)
    for slot, vid in enumerate(AttributeTuple(*attrs).ids()):
        x[slot] = table[slot][vid]
        x[slot, slot] += 1.0
        x[4 + slot, 4 + slot] = 1.0
    return x


@lru_cache(maxsize=8)
def embedding_bank(table_seed: int = DEFAULT_TABLE_SEED) -> np.ndarray:
    bank = np.stack([embed_tokens(a, table_seed) for a in DOMAIN])
    bank.setflags(write=False)
    return bank


@dataclass(frozen=True)
class SourcePairRecord:
    attrs: AttributeTuple
    x: np.ndarray
    image: np.ndarray


@dataclass
class Split:
    """Columnar view of a list of records: domain indices plus gathered arrays."""

    index: np.ndarray
    table_seed: int = DEFAULT_TABLE_SEED

    def __len__(self):
        return len(self.index)

    @property
    def ids(self) -> np.ndarray:
        return np.array([DOMAIN[i].ids() for i in self.index], dtype=np.uint8).reshape(-1, 4)

    @property
    def x(self) -> np.ndarray:
        return embedding_bank(self.table_seed)[self.index]

    @property
    def images(self) -> np.ndarray:
        return template_bank()[self.index]

    def attrs(self) -> list[AttributeTuple]:
        return [DOMAIN[i] for i in self.index]

    def records(self) -> list[SourcePairRecord]:
        xs, ims = self.x, self.images
        return [SourcePairRecord(DOMAIN[i], xs[j], ims[j]) for j, i in enumerate(self.index)]


def make_split(rng: Rng, n_train: int, n_eval: int, table_seed: int = DEFAULT_TABLE_SEED) -> tuple[Split, Split]:
    """Train: uniform draws with replacement.  Eval: a fixed seeded enumeration of the domain."""
    if n_train < 1 or n_eval < 1:
        raise ContractViolation("n_train and n_eval must be >= 1")
    train = rng.split("train").integers(0, len(DOMAIN), n_train)
    order = rng.split("eval").permutation(len(DOMAIN))
    reps = -(-n_eval // len(DOMAIN))
    evals = np.tile(order, reps)[:n_eval]
    return Split(np.asarray(train, dtype=np.int64), table_seed), Split(np.asarray(evals, dtype=np.int64), table_seed)


RECORD_FMT = "<4B"
RECORD_FLOATS = N_TOKENS * TOKEN_DIM + int(np.prod(IMAGE_SHAPE))
RECORD_BYTES = 4 + 4 * RECORD_FLOATS


def export_split(split: Split, path: str | Path) -> None:
    """Write records back to back: 4 attribute-id bytes, LE f32 embedding, LE f32 image."""
    xs, ims, ids = split.x, split.images, split.ids
    with open(path, "wb") as fh:
        for j in range(len(split)):
            fh.write(struct.pack(RECORD_FMT, *ids[j]))
            fh.write(xs[j].astype("<f4").tobytes())
            fh.write(ims[j].astype("<f4").tobytes())


def import_split(path: str | Path) -> list[SourcePairRecord]:
    raw = Path(path).read_bytes()
    if len(raw) % RECORD_BYTES:
        raise ContractViolation(f"{path}: size {len(raw)} is not a multiple of the record size {RECORD_BYTES}")
    out = []
    n_x = N_TOKENS * TOKEN_DIM
    for off in range(0, len(raw), RECORD_BYTES):
        ids = struct.unpack_from(RECORD_FMT, raw, off)
        floats = np.frombuffer(raw, dtype="<f4", count=RECORD_FLOATS, offset=off + 4)
        x = floats[:n_x].reshape(N_TOKENS, TOKEN_DIM).astype(np.float32)
        img = floats[n_x:].reshape(IMAGE_SHAPE).astype(np.float32)
        out.append(SourcePairRecord(AttributeTuple.from_ids(ids), x, img))
    return out
