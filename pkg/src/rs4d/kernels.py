"""Discretization of continuous state-space systems and the discrete
convolution kernel, computed three independent ways:

* ``kernel_naive`` - repeated multiplication by the discrete dynamics,
* ``kernel_vandermonde`` - diagonal systems, powers of the diagonal,
* ``kernel_dplr_genfun`` - DPLR systems, truncated generating function at
  the roots of unity (Cauchy sums + Woodbury correction) then inverse FFT.

Plus the stepwise recurrence and FFT convolution used to apply a kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from rs4d.errors import SingularityError, SizeError, StabilityError
from rs4d.hippo import DplrSystem
from rs4d.numerics import cauchy_dot, fft, is_power_of_two, vandermonde_dot

ZOH_SERIES_THRESHOLD = 1e-12


@dataclass(frozen=True)
class DiagonalSSM:
    """One diagonal continuous system: x' = diag(a) x + b u, y = c x.

    ``c`` has shape (channels, n). The step size is exp(log_dt).
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    log_dt: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=np.complex128))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=np.complex128))
        object.__setattr__(self, "c", np.atleast_2d(np.asarray(self.c, dtype=np.complex128)))
        if not (len(self.a) == len(self.b) == self.c.shape[1]):
            raise SizeError("a, b and c must share the state dimension")

    @property
    def n(self) -> int:
        return len(self.a)

    @property
    def dt(self) -> float:
        return math.exp(self.log_dt)

    def is_hurwitz(self) -> bool:
        return bool(np.all(self.a.real < 0))


@dataclass(frozen=True)
class DenseSSM:
    a: np.ndarray  # n x n
    b: np.ndarray  # n
    c: np.ndarray  # channels x n

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=np.complex128))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=np.complex128))
        object.__setattr__(self, "c", np.atleast_2d(np.asarray(self.c, dtype=np.complex128)))

    @classmethod
    def from_dplr(cls, sys: DplrSystem) -> "DenseSSM":
        return cls(sys.dense(), sys.b, sys.c)

    @classmethod
    def from_diagonal(cls, sys: DiagonalSSM) -> "DenseSSM":
        return cls(np.diag(sys.a), sys.b, sys.c)


@dataclass(frozen=True)
class DiscreteSSM:
    """x_k = a_bar x_{k-1} + b_bar u_k, y_k = Re(c_bar x_k).

    ``a_bar`` is a vector for diagonal systems and a matrix otherwise.
    """

    a_bar: np.ndarray
    b_bar: np.ndarray
    c_bar: np.ndarray
    dt: float

    def __post_init__(self):
        object.__setattr__(self, "c_bar", np.atleast_2d(np.asarray(self.c_bar, dtype=np.complex128)))

    @property
    def diagonal(self) -> bool:
        return self.a_bar.ndim == 1

    @property
    def n(self) -> int:
        return self.a_bar.shape[0]

    def spectral_radius(self) -> float:
        eig = self.a_bar if self.diagonal else np.linalg.eigvals(self.a_bar)
        return float(np.max(np.abs(eig)))


@dataclass(frozen=True)
class ConvKernel:
    values: np.ndarray  # channels x length, real
    path: Literal["naive", "vandermonde", "dplr_genfun"]

    @property
    def length(self) -> int:
        return self.values.shape[-1]


def discretize_bilinear(sys, dt: float) -> DiscreteSSM:
    """Tustin transform. Accepts DiagonalSSM, DenseSSM or DplrSystem."""
    if dt <= 0:
        raise SizeError("step size must be positive")
    if isinstance(sys, DplrSystem):
        sys = DenseSSM.from_dplr(sys)
    if isinstance(sys, DiagonalSSM):
        denom = 1.0 - 0.5 * dt * sys.a
        if np.any(np.abs(denom) < 1e-14):
            raise SingularityError("I - dt/2 A is singular")
        return DiscreteSSM((1.0 + 0.5 * dt * sys.a) / denom, dt * sys.b / denom, sys.c.copy(), dt)
    n = sys.a.shape[0]
    eye = np.eye(n)
    left = eye - 0.5 * dt * sys.a
    if np.linalg.cond(left) > 1e14:
        raise SingularityError("I - dt/2 A is singular")
    a_bar = np.linalg.solve(left, eye + 0.5 * dt * sys.a)
    b_bar = np.linalg.solve(left, dt * sys.b)
    return DiscreteSSM(a_bar, b_bar, sys.c.copy(), dt)


def discretize_zoh(sys: DiagonalSSM, dt: float) -> DiscreteSSM:
    if dt <= 0:
        raise SizeError("step size must be positive")
    a_bar = np.exp(dt * sys.a)
    small = np.abs(sys.a) < ZOH_SERIES_THRESHOLD
    safe_a = np.where(small, 1.0, sys.a)
    gain = np.where(small, dt, (a_bar - 1.0) / safe_a)
    return DiscreteSSM(a_bar, gain * sys.b, sys.c.copy(), dt)


def kernel_naive(d: DiscreteSSM, length: int) -> ConvKernel:
    if length < 1:
        raise SizeError("kernel length must be >= 1")
    out = np.empty((d.c_bar.shape[0], length), dtype=np.complex128)
    x = d.b_bar.copy()
    for l in range(length):
        out[:, l] = d.c_bar @ x
        x = d.a_bar * x if d.diagonal else d.a_bar @ x
    return ConvKernel(out.real.copy(), "naive")


def kernel_vandermonde(d: DiscreteSSM, length: int) -> ConvKernel:
    if not d.diagonal:
        raise SizeError("Vandermonde path needs a diagonal discrete system")
    rows = [vandermonde_dot(d.a_bar, d.b_bar * ci, length) for ci in d.c_bar]
    return ConvKernel(np.array(rows).real.copy(), "vandermonde")


def roots_of_unity(length: int) -> np.ndarray:
    return np.exp(-2j * np.pi * np.arange(length) / length)


def c_tilde(sys: DplrSystem, dt: float, length: int) -> np.ndarray:
    """C (I - A_bar^L) for the bilinear discretization of ``sys`` (dense route)."""
    d = discretize_bilinear(sys, dt)
    power = np.linalg.matrix_power(d.a_bar, length)
    return sys.c @ (np.eye(sys.n) - power)


def woodbury_solve(lambda_, p, q, shift: complex, rhs) -> np.ndarray:
    """Solve (diag(shift - lambda_) + p q*) x = rhs in O(n)."""
    lam = np.asarray(lambda_, dtype=np.complex128)
    p = np.asarray(p, dtype=np.complex128)
    q = np.asarray(q, dtype=np.complex128)
    rhs = np.asarray(rhs, dtype=np.complex128)
    d = shift - lam
    if np.any(np.abs(d) < 1e-300):
        raise SingularityError("shift coincides with a diagonal entry")
    dinv_rhs = rhs / d
    dinv_p = p / d
    denom = 1.0 + q.conj() @ dinv_p
    if abs(denom) < 1e-12:
        raise SingularityError("Woodbury scalar 1 + q* D^-1 p vanishes")
    return dinv_rhs - dinv_p * ((q.conj() @ dinv_rhs) / denom)


def genfun_at(sys: DplrSystem, ct: np.ndarray, dt: float, z: complex) -> np.ndarray:
    """Truncated generating function per channel at a root of unity z != -1."""
    g = (2.0 / dt) * (1.0 - z) / (1.0 + z)
    lam = sys.lambda_
    qc = sys.q.conj()
    k01_all = [cauchy_dot(ci * sys.p, lam, g) for ci in ct]
    k00_all = [cauchy_dot(ci * sys.b, lam, g) for ci in ct]
    k10 = cauchy_dot(qc * sys.b, lam, g)
    k11 = cauchy_dot(qc * sys.p, lam, g)
    if abs(1.0 + k11) < 1e-12:
        raise SingularityError("Woodbury scalar 1 + Q*R(z)P vanishes")
    vals = [k00 - k01 * k10 / (1.0 + k11) for k00, k01 in zip(k00_all, k01_all)]
    return (2.0 / (1.0 + z)) * np.array(vals)


def kernel_dplr_genfun(
    sys: DplrSystem, dt: float, length: int, ct: np.ndarray | None = None
) -> ConvKernel:
    """Kernel of the bilinear-discretized DPLR system via its generating function.

    ``ct`` is the reparameterized readout C(I - A_bar^L); when omitted it is
    derived from ``sys.c`` through the dense power (a validation route).
    """
    if not is_power_of_two(length):
        raise SizeError(f"length must be a power of two, got {length}")
    if dt <= 0:
        raise SizeError("step size must be positive")
    if np.any(sys.lambda_.real >= 0):
        raise StabilityError("DPLR diagonal must be Hurwitz")
    if ct is None:
        ct = c_tilde(sys, dt, length)
    ct = np.atleast_2d(np.asarray(ct, dtype=np.complex128))
    nodes = roots_of_unity(length)
    khat = np.empty((ct.shape[0], length), dtype=np.complex128)
    for k, z in enumerate(nodes):
        if length > 1 and k == length // 2:
            # z = -1: 2/(1+z) (g I - A)^{-1} tends to dt/2 I
            khat[:, k] = 0.5 * dt * (ct @ sys.b)
        else:
            khat[:, k] = genfun_at(sys, ct, dt, z)
    values = np.array([fft(row, inverse=True) for row in khat])
    return ConvKernel(values.real.copy(), "dplr_genfun")


def recurrence_step(d: DiscreteSSM, state, u: float) -> tuple[np.ndarray, np.ndarray]:
    state = np.asarray(state, dtype=np.complex128)
    if state.shape != (d.n,):
        raise SizeError(f"state must have length {d.n}")
    nxt = (d.a_bar * state if d.diagonal else d.a_bar @ state) + d.b_bar * u
    return nxt, (d.c_bar @ nxt).real


def run_recurrence(d: DiscreteSSM, inputs) -> np.ndarray:
    """Step the recurrence over a whole input sequence; returns channels x L."""
    u = np.asarray(inputs, dtype=np.float64)
    state = np.zeros(d.n, dtype=np.complex128)
    out = np.empty((d.c_bar.shape[0], len(u)))
    for k, uk in enumerate(u):
        state, out[:, k] = recurrence_step(d, state, uk)
    return out


def causal_fft_conv(kernel: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Truncated linear convolution along the last axis via a zero-padded FFT."""
    length = u.shape[-1]
    nfft = 2 * length
    kf = np.fft.rfft(kernel, n=nfft)
    uf = np.fft.rfft(u, n=nfft)
    return np.fft.irfft(kf * uf, n=nfft)[..., :length]


def apply_kernel_fft(k: ConvKernel, inputs) -> np.ndarray:
    u = np.asarray(inputs, dtype=np.float64)
    if u.ndim != 1 or len(u) != k.length:
        raise SizeError(f"input length {u.shape} does not match kernel length {k.length}")
    return causal_fft_conv(k.values, u[None, :])
