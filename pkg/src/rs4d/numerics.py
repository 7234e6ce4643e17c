"""Small dense complex linear algebra and the structured sums used by the
kernel code: power-of-two FFT, Vandermonde and Cauchy products, QR with a
fixed phase convention, and Hermitian / skew-symmetric eigensolvers.

Vectors and matrices are plain complex128 numpy arrays; every function is
pure and returns fresh arrays.
"""

from __future__ import annotations

import numpy as np

from rs4d.errors import DegeneracyError, SingularityError, SizeError, SymmetryError

_EPS = np.finfo(np.float64).eps


def _as_cvec(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.complex128)
    if arr.ndim != 1:
        raise SizeError(f"expected a 1-D vector, got shape {arr.shape}")
    return arr


def _as_cmat(m) -> np.ndarray:
    arr = np.asarray(m, dtype=np.complex128)
    if arr.ndim != 2:
        raise SizeError(f"expected a 2-D matrix, got shape {arr.shape}")
    return arr


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def next_power_of_two(n: int) -> int:
    if n < 1:
        raise SizeError("length must be positive")
    return 1 << (n - 1).bit_length()


def fft(signal, inverse: bool = False) -> np.ndarray:
    """DFT with the exp(-2*pi*i*k*n/L) sign; the inverse carries the 1/L."""
    x = _as_cvec(signal)
    if not is_power_of_two(len(x)):
        raise SizeError(f"FFT length must be a power of two, got {len(x)}")
    return np.fft.ifft(x) if inverse else np.fft.fft(x)


def vandermonde_dot(base, weights, length: int) -> np.ndarray:
    """out[l] = sum_n weights[n] * base[n]**l for l in range(length)."""
    z = _as_cvec(base)
    w = _as_cvec(weights)
    if len(z) != len(w):
        raise SizeError(f"base has {len(z)} entries, weights has {len(w)}")
    if length < 1:
        raise SizeError("length must be positive")
    powers = z[:, None] ** np.arange(length)[None, :]
    return w @ powers


def cauchy_dot(numerators, poles, node: complex) -> complex:
    """sum_j numerators[j] / (node - poles[j])."""
    v = _as_cvec(numerators)
    w = _as_cvec(poles)
    if len(v) != len(w):
        raise SizeError(f"{len(v)} numerators for {len(w)} poles")
    diff = complex(node) - w
    scale = max(1.0, abs(complex(node)), float(np.max(np.abs(w), initial=0.0)))
    if np.any(np.abs(diff) <= _EPS * scale):
        raise SingularityError(f"node {node} coincides with a pole")
    return complex(np.sum(v / diff))


def _fix_phase(q: np.ndarray, tol: float) -> np.ndarray:
    # rotate each column so its first non-negligible entry is positive real
    q = q.copy()
    for j in range(q.shape[1]):
        col = q[:, j]
        idx = np.flatnonzero(np.abs(col) > tol)
        if idx.size:
            lead = col[idx[0]]
            q[:, j] = col * (abs(lead) / lead)
    return q


def qr_orthonormalize(m) -> np.ndarray:
    """Orthonormal basis of the column space of ``m`` (rows >= cols).

    Columns are phase-normalised so the first non-negligible entry of each
    lies on the positive real axis, which makes the output unique.
    """
    a = _as_cmat(m)
    rows, cols = a.shape
    if rows < cols:
        raise SizeError(f"need rows >= cols, got {rows}x{cols}")
    q, r = np.linalg.qr(a, mode="reduced")
    diag = np.abs(np.diag(r))
    scale = max(float(np.max(np.abs(a), initial=0.0)), np.finfo(float).tiny)
    if np.any(diag <= 1e-12 * scale * max(rows, 1)):
        raise DegeneracyError("matrix is rank deficient")
    return _fix_phase(q, 1e-12)


def _check_hermitian(a: np.ndarray, tol: float) -> None:
    if a.shape[0] != a.shape[1]:
        raise SizeError(f"matrix must be square, got {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a), initial=0.0)))
    if np.max(np.abs(a - a.conj().T), initial=0.0) > tol * scale:
        raise SymmetryError("matrix is not Hermitian")


def hermitian_eig(m) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending, real) and unitary eigenvectors of a Hermitian matrix."""
    a = _as_cmat(m)
    _check_hermitian(a, 1e-10)
    a = 0.5 * (a + a.conj().T)
    w, v = np.linalg.eigh(a)
    return w, v


def skew_eig(m) -> tuple[np.ndarray, np.ndarray]:
    """Diagonalise a real skew-symmetric matrix: m = V diag(lam) V*.

    Works through the Hermitian matrix i*m, so the eigenvalues come back
    exactly imaginary.
    """
    a = _as_cmat(m)
    if a.shape[0] != a.shape[1]:
        raise SizeError(f"matrix must be square, got {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a), initial=0.0)))
    if np.max(np.abs(a.imag), initial=0.0) > 1e-12 * scale or np.max(
        np.abs(a + a.T), initial=0.0
    ) > 1e-10 * scale:
        raise SymmetryError("matrix is not real skew-symmetric")
    d, v = hermitian_eig(1j * a.real)
    return -1j * d, v
