import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from rs4d.errors import SingularityError, SizeError
from rs4d.hippo import DplrSystem, hippo_dplr
from rs4d.initialization import INIT_KINDS, InitSpec, init_diagonal
from rs4d.kernels import (
    DenseSSM,
    DiagonalSSM,
    DiscreteSSM,
    apply_kernel_fft,
    c_tilde,
    causal_fft_conv,
    discretize_bilinear,
    discretize_zoh,
    genfun_at,
    kernel_dplr_genfun,
    kernel_naive,
    kernel_vandermonde,
    recurrence_step,
    roots_of_unity,
    run_recurrence,
    woodbury_solve,
)


def scalar(a=-1.0):
    return DiagonalSSM([a], [1.0], [[1.0]])


def random_diag(rng, n, channels=1):
    a = -rng.uniform(0.1, 1.0, n) + 1j * rng.uniform(-5, 5, n)
    b = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    c = rng.standard_normal((channels, n)) + 1j * rng.standard_normal((channels, n))
    return DiagonalSSM(a, b, c)


def test_bilinear_scalar():
    d = discretize_bilinear(scalar(), 0.1)
    assert d.a_bar[0].real == pytest.approx(0.9047619, abs=1e-7)
    assert d.b_bar[0].real == pytest.approx(0.0952381, abs=1e-7)


def test_bilinear_small_step_limit():
    d = discretize_bilinear(scalar(), 1e-9)
    assert abs(d.a_bar[0] - 1) < 1e-8 and abs(d.b_bar[0]) < 1e-8


def test_bilinear_diagonal_matches_dense(rng):
    sys = random_diag(rng, 8)
    diag = discretize_bilinear(sys, 0.07)
    dense = discretize_bilinear(DenseSSM.from_diagonal(sys), 0.07)
    np.testing.assert_allclose(np.diag(dense.a_bar), diag.a_bar, atol=1e-12)
    np.testing.assert_allclose(dense.a_bar - np.diag(np.diag(dense.a_bar)), 0, atol=1e-12)
    np.testing.assert_allclose(dense.b_bar, diag.b_bar, atol=1e-12)


def test_bilinear_singular():
    with pytest.raises(SingularityError):
        discretize_bilinear(scalar(2.0), 1.0)


def test_zoh_scalar():
    d = discretize_zoh(scalar(), 0.1)
    assert d.a_bar[0].real == pytest.approx(0.9048374, abs=1e-7)
    assert d.b_bar[0].real == pytest.approx(0.0951626, abs=1e-7)


def test_zoh_zero_pole_series_limit():
    d = discretize_zoh(DiagonalSSM([0.0, 1e-14], [2.0, 2.0], [[1.0, 1.0]]), 0.3)
    np.testing.assert_allclose(d.b_bar, [0.6, 0.6], rtol=1e-12)


def test_zoh_matches_matrix_exponential(rng):
    sys = random_diag(rng, 6)
    dt = 0.13
    d = discretize_zoh(sys, dt)
    for j in range(6):
        # augmented-matrix oracle: expm([[a, b], [0, 0]] dt) = [[e^{a dt}, b_bar], [0, 1]]
        aug = np.array([[sys.a[j], sys.b[j]], [0, 0]]) * dt
        e = scipy.linalg.expm(aug)
        assert abs(e[0, 0] - d.a_bar[j]) < 1e-12
        assert abs(e[0, 1] - d.b_bar[j]) < 1e-12


def test_naive_examples():
    d = DiscreteSSM(np.array([0.5]), np.array([1.0]), np.array([[1.0]]), 1.0)
    np.testing.assert_allclose(kernel_naive(d, 4).values[0], [1, 0.5, 0.25, 0.125])
    np.testing.assert_allclose(kernel_vandermonde(d, 4).values[0], [1, 0.5, 0.25, 0.125])
    zero = DiscreteSSM(np.array([0.5]), np.array([1.0]), np.array([[0.0]]), 1.0)
    assert np.all(kernel_naive(zero, 5).values == 0)
    assert kernel_naive(d, 1).values.shape == (1, 1)


@pytest.mark.parametrize("kind", INIT_KINDS)
def test_vandermonde_matches_naive(kind, rng):
    sys = init_diagonal(InitSpec(kind, 32, channels=2), rng)
    d = discretize_zoh(sys, sys.dt)
    diff = np.abs(kernel_vandermonde(d, 512).values - kernel_naive(d, 512).values).max()
    assert diff < 1e-10


def test_vandermonde_needs_diagonal():
    d = discretize_bilinear(DenseSSM(np.diag([-1.0, -2.0]), [1, 1], [[1, 1]]), 0.1)
    with pytest.raises(SizeError):
        kernel_vandermonde(d, 4)


def test_roots_of_unity_follow_fft_sign():
    z = roots_of_unity(8)
    x = np.arange(8.0)
    np.testing.assert_allclose([np.sum(x * zk ** np.arange(8)) for zk in z], np.fft.fft(x), atol=1e-12)


def test_woodbury_examples():
    assert woodbury_solve([0.0], [1.0], [1.0], 2.0, [3.0])[0] == pytest.approx(1.0)
    lam = np.array([-1.0, -2.0 + 1j])
    np.testing.assert_allclose(woodbury_solve(lam, [0, 0], [0, 0], 1.0, [1.0, 2.0]), np.array([1.0, 2.0]) / (1.0 - lam))


def test_woodbury_matches_dense(rng):
    for _ in range(20):
        n = 16
        lam = -rng.uniform(0.1, 2, n) + 1j * rng.standard_normal(n)
        p, q, rhs = (rng.standard_normal(n) + 1j * rng.standard_normal(n) for _ in range(3))
        shift = complex(rng.standard_normal(), rng.standard_normal())
        dense = np.diag(shift - lam) + np.outer(p, q.conj())
        np.testing.assert_allclose(woodbury_solve(lam, p, q, shift, rhs), np.linalg.solve(dense, rhs), atol=1e-10)


def test_woodbury_singular_scalar():
    # 1 + q* D^-1 p = 1 + (-1)/1 = 0
    with pytest.raises(SingularityError):
        woodbury_solve([0.0], [-1.0], [1.0], 1.0, [1.0])


def _diag_as_dplr(lam, b, c):
    n = len(lam)
    z = np.zeros(n, dtype=complex)
    return DplrSystem(np.asarray(lam, complex), z, z.copy(), np.asarray(b, complex),
                      np.atleast_2d(np.asarray(c, complex)), np.eye(n))


def test_genfun_pure_diagonal_matches_vandermonde():
    sys = _diag_as_dplr([-0.5], [1.0], [1.0])
    dt = 0.1
    gen = kernel_dplr_genfun(sys, dt, 64).values
    d = discretize_bilinear(DiagonalSSM(sys.lambda_, sys.b, sys.c), dt)
    np.testing.assert_allclose(gen, kernel_vandermonde(d, 64).values, atol=1e-10)


def test_genfun_sum_identity_at_z_one(rng):
    sys = hippo_dplr(6, c=rng.standard_normal(6))
    dt, length = 0.05, 32
    ct = c_tilde(sys, dt, length)
    d = discretize_bilinear(sys, dt)
    # sum of the untruncated complex kernel terms C_bar A_bar^l B_bar, l < L
    total, x = 0.0, d.b_bar.copy()
    for _ in range(length):
        total += (d.c_bar @ x)[0]
        x = d.a_bar @ x
    assert abs(genfun_at(sys, ct, dt, 1.0)[0] - total) < 1e-10


def test_genfun_hippo_matches_naive(rng):
    sys = hippo_dplr(16, c=rng.standard_normal(16) / 4)
    dt = 0.05
    naive = kernel_naive(discretize_bilinear(sys, dt), 256).values
    gen = kernel_dplr_genfun(sys, dt, 256).values
    assert np.abs(gen - naive).max() < 1e-6


def test_genfun_rejects_odd_length():
    with pytest.raises(SizeError):
        kernel_dplr_genfun(hippo_dplr(4), 0.1, 6)


def test_recurrence_zero():
    d = discretize_zoh(scalar(), 0.1)
    state, y = recurrence_step(d, np.zeros(1), 0.0)
    assert np.all(state == 0) and np.all(y == 0)


def test_recurrence_impulse_gives_kernel(rng):
    d = discretize_zoh(random_diag(rng, 5, channels=2), 0.1)
    u = np.zeros(40)
    u[0] = 1.0
    np.testing.assert_allclose(run_recurrence(d, u), kernel_naive(d, 40).values, atol=1e-13)


def test_recurrence_matches_fft_convolution(rng):
    d = discretize_zoh(random_diag(rng, 8), 0.05)
    u = rng.standard_normal(512)
    k = kernel_vandermonde(d, 512)
    np.testing.assert_allclose(run_recurrence(d, u), apply_kernel_fft(k, u), atol=1e-8)


def test_fft_conv_identity_and_shift(rng):
    u = rng.standard_normal(4)
    np.testing.assert_allclose(causal_fft_conv(np.array([1.0, 0, 0, 0]), u), u, atol=1e-14)
    shifted = causal_fft_conv(np.array([0, 1.0, 0, 0]), u)
    assert abs(shifted[0]) < 1e-14
    np.testing.assert_allclose(shifted[1:], u[:-1], atol=1e-14)


def test_fft_conv_matches_direct(rng):
    k, u = rng.standard_normal(256), rng.standard_normal(256)
    ref = np.array([np.dot(k[: l + 1][::-1], u[: l + 1]) for l in range(256)])
    np.testing.assert_allclose(causal_fft_conv(k, u), ref, atol=1e-10)


def test_apply_kernel_length_mismatch(rng):
    d = discretize_zoh(scalar(), 0.1)
    with pytest.raises(SizeError):
        apply_kernel_fft(kernel_naive(d, 8), np.ones(7))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 12), st.integers(1, 64), st.integers(0, 2**31 - 1))
def test_stable_discretizations_contract(n, length, seed):
    r = np.random.default_rng(seed)
    sys = random_diag(r, n)
    for d in (discretize_zoh(sys, 0.1), discretize_bilinear(sys, 0.1)):
        assert d.spectral_radius() < 1
        np.testing.assert_allclose(kernel_vandermonde(d, length).values, kernel_naive(d, length).values, atol=1e-10)
