import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xflow.flowcore import (
    SIGMA_MIN,
    InterpolantConfig,
    TimestepSchedule,
    interp_linear,
    interp_sincos,
    make_flow_sample,
    sample_timestep,
    target_velocity_linear,
    target_velocity_sincos,
)
from xflow.numerics import ContractViolation, Rng, Tensor, backward, parameter


def s(x):
    return np.array(x, dtype=np.float64)


def test_sigma_min_value():
    assert SIGMA_MIN == 1e-5


def test_linear_hand_values():
    assert interp_linear(s(2.0), s(4.0), 0.5) == pytest.approx(3.00001, abs=1e-12)
    assert target_velocity_linear(s(2.0), s(4.0)) == pytest.approx(2.00002, abs=1e-12)
    assert target_velocity_linear(s(0.0), s(0.0)) == 0.0


def test_linear_t0_is_source_exactly():
    r = np.random.default_rng(0)
    z0, z1 = r.standard_normal((2, 3, 4, 4))
    assert np.array_equal(interp_linear(z0, z1, 0.0), z0)


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.integers(0, 2**31))
def test_linear_path_is_affine(t1, t2, seed):
    if abs(t1 - t2) < 1e-3:
        return
    r = np.random.default_rng(seed)
    z0, z1 = r.standard_normal((2, 5))
    slope = (interp_linear(z0, z1, t2) - interp_linear(z0, z1, t1)) / (t2 - t1)
    assert np.allclose(slope, target_velocity_linear(z0, z1), atol=1e-9)


def test_sincos_hand_values_and_endpoints():
    assert interp_sincos(s(2.0), s(4.0), 0.5) == pytest.approx(math.sqrt(2) / 2 * 6, abs=1e-12)
    z0, z1 = s([1.0, -2.0]), s([0.5, 3.0])
    assert np.allclose(interp_sincos(z0, z1, 0.0), z0, atol=1e-15)
    assert np.allclose(interp_sincos(z0, z1, 1.0), z1, atol=1e-15)
    assert np.allclose(target_velocity_sincos(z0, z1, 0.0), math.pi / 2 * z1, atol=1e-15)
    assert np.allclose(target_velocity_sincos(z0, z1, 1.0), -math.pi / 2 * z0, atol=1e-15)


@pytest.mark.parametrize("t", [0.1, 0.37, 0.5, 0.9])
def test_sincos_velocity_matches_centered_difference(t):
    r = np.random.default_rng(3)
    z0, z1 = r.standard_normal((2, 6))
    d = 1e-4
    fd = (interp_sincos(z0, z1, t + d) - interp_sincos(z0, z1, t - d)) / (2 * d)
    assert np.allclose(fd, target_velocity_sincos(z0, z1, t), atol=1e-7)


def test_per_example_times_broadcast():
    r = np.random.default_rng(1)
    z0, z1 = r.standard_normal((2, 4, 3, 2, 2))
    t = np.array([0.0, 0.25, 0.5, 1.0])
    out = interp_linear(z0, z1, t)
    for i in range(4):
        assert np.allclose(out[i], interp_linear(z0[i], z1[i], float(t[i])))


def test_contract_errors():
    with pytest.raises(ContractViolation):
        interp_linear(np.zeros(3), np.zeros(4), 0.5)
    with pytest.raises(ContractViolation):
        interp_sincos(np.zeros(3), np.zeros(3), 1.5)
    with pytest.raises(ContractViolation):
        InterpolantConfig("cubic")
    with pytest.raises(ContractViolation):
        TimestepSchedule("beta")


def test_flow_sample_differentiates_through_source():
    z0 = parameter(np.ones((2, 3)))
    z1 = Tensor(np.full((2, 3), 2.0))
    fs = make_flow_sample(InterpolantConfig(), z0, z1, np.array([0.5, 0.5]))
    g = backward((fs.z_t * fs.v_hat).sum(), [z0])[z0]
    # d/dz0 of (t z1 + a z0)(z1 - b z0), a = 1-(1-s)t, b = 1-s
    a, b = 1 - (1 - SIGMA_MIN) * 0.5, 1 - SIGMA_MIN
    expected = a * (2.0 - b) - b * (0.5 * 2.0 + a)
    assert np.allclose(g, expected)


def test_logit_normal_draws():
    t = sample_timestep(Rng(0), TimestepSchedule(), size=100_000)
    assert ((t > 0) & (t < 1)).all()
    assert abs(np.median(t) - 0.5) < 0.01


def test_uniform_draws():
    t = sample_timestep(Rng(1), TimestepSchedule("uniform"), size=100_000)
    assert abs(t.mean() - 0.5) < 0.01


def test_scalar_draw_is_float():
    assert isinstance(sample_timestep(Rng(2), TimestepSchedule()), float)
