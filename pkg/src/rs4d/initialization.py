"""Diagonal initializations (S4D-Lin, -Inv, -LegS, Butterworth), transfer
functions, Bode data and closed-form H2 norms."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from rs4d.errors import SingularityError, SizeError, StabilityError
from rs4d.hippo import hippo_dplr
from rs4d.kernels import DiagonalSSM

InitKind = Literal["s4d_lin", "s4d_inv", "s4d_legs", "s4d_bw"]
INIT_KINDS = ("s4d_lin", "s4d_inv", "s4d_legs", "s4d_bw")


@dataclass(frozen=True)
class InitSpec:
    kind: InitKind
    n: int
    dt_min: float = 1e-3
    dt_max: float = 1e-1
    channels: int = 1

    def __post_init__(self):
        if self.kind not in INIT_KINDS:
            raise ValueError(f"unknown init kind {self.kind!r}")
        if self.n < 1:
            raise SizeError("state size must be >= 1")
        if not 0 < self.dt_min <= self.dt_max:
            raise ValueError("need 0 < dt_min <= dt_max")


@dataclass(frozen=True)
class TransferSample:
    omega: float
    magnitude_db: float
    phase_deg: float

    @property
    def magnitude(self) -> float:
        return 10.0 ** (self.magnitude_db / 20.0)


@dataclass(frozen=True)
class H2Report:
    m: np.ndarray
    norm_sq: float
    per_channel: np.ndarray


def butterworth_poles(n: int, omega_c: float = 1.0) -> np.ndarray:
    """Left-half-plane poles omega_c * exp(i(2k+n-1)pi/2n), k = 1..n."""
    if n < 1:
        raise SizeError("filter order must be >= 1")
    k = np.arange(1, n + 1)
    return omega_c * np.exp(1j * (2 * k + n - 1) * np.pi / (2 * n))


def diagonal_poles(kind: InitKind, n: int) -> np.ndarray:
    k = np.arange(n)
    if kind == "s4d_lin":
        return -0.5 + 1j * np.pi * k
    if kind == "s4d_inv":
        return -0.5 + 1j * (n / np.pi) * (n / (2 * k + 1) - 1)
    if kind == "s4d_legs":
        return hippo_dplr(n).lambda_.copy()
    if kind == "s4d_bw":
        return butterworth_poles(n)
    raise ValueError(f"unknown init kind {kind!r}")


def init_diagonal(spec: InitSpec, rng: np.random.Generator) -> DiagonalSSM:
    """Poles from ``spec.kind``, b = 1, c complex normal with variance 1/n,
    step size log-uniform in [dt_min, dt_max]."""
    a = diagonal_poles(spec.kind, spec.n).astype(np.complex128)
    b = np.ones(spec.n, dtype=np.complex128)
    scale = math.sqrt(0.5 / spec.n)
    c = scale * (
        rng.standard_normal((spec.channels, spec.n)) + 1j * rng.standard_normal((spec.channels, spec.n))
    )
    log_dt = rng.uniform(math.log(spec.dt_min), math.log(spec.dt_max))
    return DiagonalSSM(a, b, c, float(log_dt))


def butterworth_reference(n: int, omega_c: float = 1.0) -> Callable[[complex], complex]:
    """Product-form low-pass transfer function G(s)."""
    poles = butterworth_poles(n, omega_c)

    def g(s: complex) -> complex:
        return complex(np.prod(omega_c / (s - poles)))

    return g


def butterworth_residues(n: int, omega_c: float = 1.0) -> np.ndarray:
    """Partial-fraction residues r_k with G(s) = sum_k r_k / (s - p_k)."""
    poles = butterworth_poles(n, omega_c)
    res = np.empty(n, dtype=np.complex128)
    for k in range(n):
        others = np.delete(poles, k)
        res[k] = omega_c**n / np.prod(poles[k] - others)
    return res


def butterworth_ssm(n: int, log_dt: float = 0.0) -> DiagonalSSM:
    """S4D-BW system whose readout carries the Butterworth residues (b = 1)."""
    return DiagonalSSM(butterworth_poles(n), np.ones(n), butterworth_residues(n)[None, :], log_dt)


def transfer_value(sys: DiagonalSSM, omega: float, channel: int = 0) -> complex:
    """sum_n c_n b_n / (i omega / dt - a_n).

    Frequencies are in radians per sample, so the cutoff of a unit-radius
    pole set sits at omega = dt.
    """
    s = 1j * omega / sys.dt
    diff = s - sys.a
    if np.any(np.abs(diff) < 1e-14 * max(1.0, abs(s))):
        raise SingularityError(f"pole on the imaginary axis at omega={omega}")
    return complex(np.sum(sys.c[channel] * sys.b / diff))


def transfer_eval(sys: DiagonalSSM, omega: float, channel: int = 0) -> TransferSample:
    g = transfer_value(sys, omega, channel)
    mag = abs(g)
    db = 20.0 * math.log10(mag) if mag > 0 else -math.inf
    return TransferSample(float(omega), db, math.degrees(math.atan2(g.imag, g.real)))


def bode_grid(lo: float = 1e-2, hi: float = 1e4, per_decade: int = 200) -> np.ndarray:
    decades = math.log10(hi) - math.log10(lo)
    return np.logspace(math.log10(lo), math.log10(hi), int(round(decades * per_decade)) + 1)


def bode_data(sys: DiagonalSSM, omegas=None, channel: int = 0) -> list[TransferSample]:
    omegas = bode_grid() if omegas is None else omegas
    return [transfer_eval(sys, float(w), channel) for w in omegas]


def m_matrix(a) -> np.ndarray:
    """M_ij = -1 / (a_i + conj(a_j)); Hermitian positive definite for Hurwitz a."""
    a = np.asarray(a, dtype=np.complex128)
    if np.any(a.real >= 0):
        raise StabilityError("H2 norm needs Re(a) < 0 for every pole")
    return -1.0 / (a[:, None] + a.conj()[None, :])


def energy_matrix(a) -> np.ndarray:
    """conj(M): the Hermitian form with ||G||^2 = x* conj(M) x for x = b o c.

    The double sum over c_i conj(c_j) b_i conj(b_j) / -(a_i + conj(a_j))
    is x^T M conj(x), which is this form; M and conj(M) share eigenvalues.
    """
    return m_matrix(a).conj()


def h2_norm(sys: DiagonalSSM) -> H2Report:
    m = m_matrix(sys.a)
    x = (sys.b[None, :] * sys.c).T  # n x channels, columns b o c_i
    per = np.einsum("ik,ij,jk->k", x, m, x.conj()).real
    return H2Report(m, float(per.sum()), per)
