import numpy as np
import pytest

from xflow.numerics import ContractViolation, Rng
from xflow.synthdata import (
    COLORS,
    DOMAIN,
    IMAGE_SHAPE,
    AttributeTuple,
    embed_tokens,
    embedding_bank,
    export_split,
    import_split,
    is_matched,
    make_split,
    min_template_distance,
    oracle_decode,
    oracle_decode_batch,
    parse_attrs,
    render,
    template_bank,
    unmatched_threshold,
)

RED = AttributeTuple("circle", "red", (1, 1), "large")


def test_domain_size():
    assert len(DOMAIN) == 288 and len(set(DOMAIN)) == 288


def test_render_determinism_and_range():
    a, b = render(RED), render(RED)
    assert np.array_equal(a, b)
    assert a.shape == IMAGE_SHAPE and a.min() >= -1 and a.max() <= 1


def test_color_change_only_touches_shape_pixels():
    red, blue = render(RED), render(RED._replace(color="blue"))
    changed = (red != blue).any(axis=0)
    background = (red == 1.0).all(axis=0)
    assert changed.any() and not (changed & background).any()


def test_all_renders_distinct():
    bank = template_bank().reshape(288, -1).astype(np.float64)
    d2 = ((bank[:, None] - bank[None]) ** 2).sum(-1)
    np.fill_diagonal(d2, np.inf)
    assert d2.min() > 0
    assert np.sqrt(d2.min()) == pytest.approx(min_template_distance())


def test_oracle_round_trip():
    idx, dist = oracle_decode_batch(template_bank())
    assert np.array_equal(idx, np.arange(288)) and np.all(dist == 0)
    assert oracle_decode(render(RED)) == (RED, 0.0)


def test_oracle_noise_robustness():
    r = Rng(0)
    picks = r.integers(0, 288, 1000)
    noisy = template_bank()[picks] + 0.1 * r.normal((1000,) + IMAGE_SHAPE)
    idx, _ = oracle_decode_batch(noisy)
    assert (idx == picks).mean() >= 0.99


def test_uniform_noise_is_unmatched():
    img = Rng(1).uniform(IMAGE_SHAPE) * 2 - 1
    _, dist = oracle_decode(img)
    assert not is_matched(dist)
    assert unmatched_threshold() == pytest.approx(min_template_distance() / 2)


def test_embeddings():
    x = embed_tokens(RED)
    assert np.array_equal(x, embed_tokens(RED))
    bank = embedding_bank().reshape(288, -1)
    assert len(np.unique(bank, axis=0)) == 288
    y = embed_tokens(RED._replace(color="green"))
    rows = np.where((x != y).any(axis=1))[0]
    assert rows.tolist() == [1]
    assert not np.array_equal(embed_tokens(RED, 1), x)


def test_parse_attrs():
    assert parse_attrs("shape=circle,color=red,cell=1:1,size=large") == RED
    assert parse_attrs(" size=large , cell=1:1,color=red,shape=circle") == RED
    with pytest.raises(ContractViolation, match="valid"):
        parse_attrs("shape=hexagon,color=red,cell=1:1,size=large")
    for bad in ("shape=circle,color=red", "shape=circle,color=red,cell=3:0,size=large", "garbage",
                "shape=circle,shape=square,color=red,cell=1:1,size=large"):
        with pytest.raises(ContractViolation):
            parse_attrs(bad)
    assert parse_attrs(RED.format()) == RED


def test_make_split():
    tr1, ev1 = make_split(Rng(0), 10_000, 300)
    tr2, ev2 = make_split(Rng(0), 10_000, 300)
    assert np.array_equal(tr1.index, tr2.index) and np.array_equal(ev1.index, ev2.index)
    ids = tr1.ids
    for slot, values in enumerate((4, 4, 9, 2)):
        freq = np.bincount(ids[:, slot], minlength=values) / len(ids)
        # 5 percentage points; iid draws cannot promise 5% relative at 10^4 samples
        assert np.all(np.abs(freq - 1 / values) <= 0.05)
        # binomial oracle: 5 standard deviations is a much tighter bound
        sd = np.sqrt((1 / values) * (1 - 1 / values) / len(ids))
        assert np.all(np.abs(freq - 1 / values) <= 5 * sd)
    for rec in ev1.records()[:50]:
        assert np.array_equal(rec.image, render(rec.attrs))
    assert len(set(ev1.index[:288].tolist())) == 288


def test_split_export_import(tmp_path):
    _, ev = make_split(Rng(0), 1, 5)
    path = tmp_path / "eval.bin"
    export_split(ev, path)
    recs = import_split(path)
    assert [r.attrs for r in recs] == ev.attrs()
    assert np.array_equal(recs[2].x, ev.x[2]) and np.array_equal(recs[2].image, ev.images[2])
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(ContractViolation):
        import_split(path)
