import json

import numpy as np
import pytest

from xflow.metrics import (
    EvalReport,
    alignment_accuracy,
    arithmetic_case,
    frechet_distance,
    frechet_from_features,
    image_features,
    interp_smoothness,
    interp_steps,
    latent_gaussianity,
)
from xflow.numerics import ContractViolation, Rng
from xflow.synthdata import DOMAIN, render


def test_alignment_accuracy_counts():
    conds = list(DOMAIN[:4])
    imgs = [render(a) for a in conds]
    assert alignment_accuracy(imgs, conds) == 1.0
    assert alignment_accuracy(imgs, conds[1:] + conds[:1]) == 0.0
    imgs[2] = render(DOMAIN[100])
    assert alignment_accuracy(imgs, conds) == 0.75


def test_alignment_unmatched_is_failure():
    noise = Rng(0).uniform((1, 3, 32, 32)) * 2 - 1
    assert alignment_accuracy(noise, [DOMAIN[0]]) == 0.0


def test_alignment_contract():
    with pytest.raises(ContractViolation):
        alignment_accuracy([render(DOMAIN[0])], DOMAIN[:2])
    with pytest.raises(ContractViolation):
        alignment_accuracy(np.zeros((0, 3, 32, 32)), [])


def test_image_features_shape():
    f = image_features(np.ones((2, 3, 32, 32)))
    assert f.shape == (2, 64) and np.all(f == 1.0)


def test_frechet_identical_and_symmetric():
    r = np.random.default_rng(0)
    a = r.uniform(-1, 1, (100, 3, 32, 32))
    b = r.uniform(-1, 1, (100, 3, 32, 32)) * 0.5
    assert frechet_distance(a, a) == pytest.approx(0.0, abs=1e-6)
    assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a), abs=1e-6)
    assert frechet_distance(a, b) > 0


def test_frechet_closed_form_mean_shift():
    # exact identity covariance and zero mean: a +-1 Hadamard-style design
    d = 4
    signs = np.array(np.meshgrid(*[[-1.0, 1.0]] * d)).reshape(d, -1).T
    fa = signs * np.sqrt((len(signs) - 1) / len(signs))
    assert np.allclose(np.cov(fa, rowvar=False), np.eye(d))
    shift = np.array([2.0, 0.0, 0.0, 0.0])
    assert frechet_from_features(fa, fa + shift) == pytest.approx(4.0, abs=1e-9)


def test_frechet_scaled_covariance_oracle():
    # for C_B = s^2 C_A the trace term is tr(C_A) (1 - s)^2
    r = np.random.default_rng(1)
    fa = r.standard_normal((200, 5))
    ca = np.cov(fa, rowvar=False)
    assert frechet_from_features(fa, 3.0 * fa) == pytest.approx(np.trace(ca) * 4 + 4 * np.sum(fa.mean(0) ** 2), rel=1e-9)


def test_frechet_needs_enough_samples():
    with pytest.raises(ContractViolation):
        frechet_from_features(np.zeros((64, 64)), np.zeros((100, 64)))


def test_latent_gaussianity():
    z = np.random.default_rng(0).standard_normal((10_000, 3, 8, 8))
    m, lo, hi = latent_gaussianity(z)
    assert m <= 0.1 and 0.9 <= lo <= hi <= 1.1
    with pytest.raises(ContractViolation):
        latent_gaussianity(z[:1])


def test_latent_gaussianity_per_channel():
    z = np.zeros((4, 2, 2, 2))
    z[:, 1] = np.arange(4.0)[:, None, None]
    z[0, 0, 0, 0] = 8.0
    m, lo, hi = latent_gaussianity(z, per_channel=True)
    # channel 0: one 8 among 16 values; channel 1: 0..3 each four times
    assert m == pytest.approx(1.5)
    assert lo == pytest.approx(1.25) and hi == pytest.approx(64 / 16 - 0.25)


def test_interp_smoothness_cases():
    line = np.linspace(0, 1, 9)[:, None] * np.ones((9, 5))
    assert interp_smoothness(line) == pytest.approx(1.0)
    jump = np.concatenate([np.zeros((5, 5)), np.ones((4, 5))])
    assert interp_smoothness(jump) == pytest.approx(8.0)
    assert interp_smoothness(np.zeros((9, 5))) == 1.0
    assert np.all(interp_steps(np.zeros((9, 5))) == 0)
    with pytest.raises(ContractViolation):
        interp_smoothness(np.zeros((1, 5)))


def test_arithmetic_cases_are_single_slot_edits():
    r = Rng(0)
    for _ in range(200):
        a, b, c, want = arithmetic_case(r)
        ia, ib, ic, iw = (np.array(t.ids()) for t in (a, b, c, want))
        diff = np.nonzero(ib != ic)[0]
        assert len(diff) == 1
        s = diff[0]
        assert ic[s] == ia[s] and iw[s] == ib[s] != ia[s]
        assert np.array_equal(np.delete(iw, s), np.delete(ia, s))


def test_eval_report_finiteness():
    rep = EvalReport(1.0, 0.5, 0.1, (0.9, 1.1), 1.2, 0.8, 10, 5, 2, 0, 3.0, 50, "midpoint")
    assert json.loads(rep.to_json())["latent_var_range"] == [0.9, 1.1]
    with pytest.raises(ContractViolation):
        EvalReport(float("nan"), 0.5, 0.1, (0.9, 1.1), 1.2, 0.8, 10, 5, 2, 0, 3.0, 50, "midpoint")
