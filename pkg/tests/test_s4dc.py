import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rs4d.errors import DegeneracyError, SingularityError
from rs4d.initialization import energy_matrix, h2_norm, m_matrix
from rs4d.kernels import DiagonalSSM
from rs4d.numerics import hermitian_eig
from rs4d.s4dc import (
    h2_of_x,
    readout_from_x,
    s4dc_train_step,
    shift_matrix,
    shifted_power_iteration,
    shifted_power_step,
)


def test_shift_matrix_is_negative_semidefinite(rng):
    a = -rng.uniform(0.1, 1, 6) + 1j * rng.standard_normal(6)
    w = np.linalg.eigvalsh(shift_matrix(m_matrix(a)))
    assert np.all(w <= 1e-12)


def test_diag31_converges_to_second_axis():
    m = np.diag([3.0, 1.0])
    x0 = np.array([0.6, 0.8])
    x1 = shifted_power_step(x0, m)[:, 0]
    assert abs(x1[1]) > 0.8 and abs(x1[0]) < 0.6
    x = shifted_power_iteration(x0, m, 100)[:, 0]
    assert np.linalg.norm(x - [0.0, 1.0]) < 1e-8


def test_minimal_eigenvector_is_fixed_point(rng):
    a = -rng.uniform(0.1, 1, 5) + 1j * rng.standard_normal(5)
    e = energy_matrix(a)
    _, v = hermitian_eig(e)
    x = shifted_power_step(v[:, :1], e)
    assert np.linalg.norm(x - v[:, :1] * (x[0, 0] / v[0, 0])) < 1e-12
    assert abs(abs(x[0, 0]) - abs(v[0, 0])) < 1e-12


def test_two_channels_span_smallest_pair():
    m = np.diag([5.0, 2.0, 1.0])
    x = shifted_power_iteration(np.ones((3, 2)) + np.eye(3)[:, :2], m, 300)
    assert np.linalg.norm(x[0]) < 1e-8
    assert h2_of_x(x, m) == pytest.approx(3.0, abs=1e-10)


def test_power_step_rank_collapse():
    with pytest.raises(DegeneracyError):
        shifted_power_step(np.zeros((3, 1)), np.eye(3))


def test_h2_of_x_matches_h2_norm(rng):
    a = -rng.uniform(0.1, 1, 6) + 1j * rng.standard_normal(6)
    b = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    c = rng.standard_normal((3, 6)) + 1j * rng.standard_normal((3, 6))
    x = (b * c).T
    assert h2_of_x(x, energy_matrix(a)) == pytest.approx(h2_norm(DiagonalSSM(a, b, c)).norm_sq, rel=1e-12)


def test_readout_from_x():
    x = np.array([[1.0 + 1j], [2.0]])
    np.testing.assert_array_equal(readout_from_x(x, np.ones(2)), x.T)
    np.testing.assert_allclose(readout_from_x(x, [2.0, 4.0]), [[0.5 + 0.5j, 0.5]])
    with pytest.raises(SingularityError):
        readout_from_x(x, [1.0, 0.0])


def test_train_step_fixed_point(rng):
    a = -rng.uniform(0.1, 1, 4) + 1j * rng.standard_normal(4)
    _, v = hermitian_eig(energy_matrix(a))
    sys = DiagonalSSM(a, np.ones(4), v[:, 0][None, :])
    new, x = s4dc_train_step(sys, v[:, :1], grad_hook=lambda s: None)
    phase = x[0, 0] / v[0, 0]
    assert np.linalg.norm(x[:, 0] - phase * v[:, 0]) < 1e-12
    np.testing.assert_array_equal(new.c, x.T)


def test_train_step_hook_sees_current_system():
    seen = []
    sys = DiagonalSSM([-1.0, -2.0], [2.0, 2.0], [[0.0, 0.0]])
    x = np.array([[0.6], [0.8]])

    def hook(s):
        seen.append(s)
        return DiagonalSSM(s.a * 2, s.b, s.c, s.log_dt)

    new, _ = s4dc_train_step(sys, x, hook)
    np.testing.assert_allclose(seen[0].c, [[0.3, 0.4]])
    np.testing.assert_allclose(new.a, [-2.0, -4.0])


def test_500_steps_reach_minimal_h2():
    r = np.random.default_rng(11)
    n = 8
    a = -r.uniform(0.2, 1.0, n) + 1j * np.pi * np.arange(n)
    b = r.standard_normal(n) + 1j * r.standard_normal(n)
    x = r.standard_normal((n, 1)) + 1j * r.standard_normal((n, 1))
    x /= np.linalg.norm(x)
    sys = DiagonalSSM(a, b, readout_from_x(x, b))
    for _ in range(500):
        sys, x = s4dc_train_step(sys, x)
    lam_min = hermitian_eig(m_matrix(a))[0][0]
    assert h2_norm(sys).norm_sq == pytest.approx(lam_min, abs=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 8), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_power_step_keeps_orthonormal_columns(n, cols, seed):
    cols = min(cols, n)
    r = np.random.default_rng(seed)
    a = -r.uniform(0.1, 2, n) + 1j * r.uniform(-5, 5, n)
    x = r.standard_normal((n, cols)) + 1j * r.standard_normal((n, cols))
    y = shifted_power_step(x, energy_matrix(a))
    assert np.linalg.norm(y.conj().T @ y - np.eye(cols)) < 1e-10
    # a power step never increases the Rayleigh trace
    q = shifted_power_step(y, energy_matrix(a))
    assert h2_of_x(q, energy_matrix(a)) <= h2_of_x(y, energy_matrix(a)) * (1 + 1e-9) + 1e-12
