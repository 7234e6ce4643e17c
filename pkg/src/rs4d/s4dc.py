"""H2-constrained training helpers: drive X = B o C toward the eigenvectors
with the smallest eigenvalues by shifted power iteration.

The iteration is plain linear algebra on whatever Hermitian matrix it is
given. For a diagonal system the matrix whose quadratic form in X is the
squared H2 norm is ``energy_matrix(a)`` = conj(M)."""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from rs4d.errors import SingularityError
from rs4d.initialization import energy_matrix
from rs4d.kernels import DiagonalSSM
from rs4d.numerics import qr_orthonormalize


def shift_matrix(m: np.ndarray) -> np.ndarray:
    """M - ||M||_F I. Every eigenvalue of the result is <= 0 and the smallest
    eigenvalue of M becomes the largest in magnitude."""
    return m - np.linalg.norm(m, "fro") * np.eye(m.shape[0])


def shifted_power_step(x, m) -> np.ndarray:
    """One orthogonalized shifted power step on the n x channels matrix ``x``."""
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[1] >= x.shape[0]:
        # X already spans the whole space (e.g. n = 1, where the shift gives 0)
        return qr_orthonormalize(x)
    return qr_orthonormalize(shift_matrix(np.asarray(m, dtype=np.complex128)) @ x)


def shifted_power_iteration(x, m, steps: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.complex128)
    shifted = shift_matrix(np.asarray(m, dtype=np.complex128))
    x = qr_orthonormalize(x if x.ndim == 2 else x[:, None])
    if x.shape[1] >= x.shape[0]:
        return x
    for _ in range(steps):
        x = qr_orthonormalize(shifted @ x)
    return x


def h2_of_x(x, m) -> float:
    """tr(X* M X): output energy of the system whose B o C columns are X."""
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim == 1:
        x = x[:, None]
    return float(np.trace(x.conj().T @ m @ x).real)


def readout_from_x(x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """C = X / B per channel, returned as channels x n."""
    b = np.asarray(b, dtype=np.complex128)
    if np.any(b == 0):
        raise SingularityError("B has a zero entry; cannot recover C = X / B")
    return (np.asarray(x) / b[:, None]).T


GradHook = Callable[[DiagonalSSM], Optional[DiagonalSSM]]


def s4dc_train_step(sys: DiagonalSSM, x, grad_hook: GradHook | None = None):
    """One training step with X held out of the gradient update.

    ``grad_hook`` receives the system with C = X / B and returns it with
    updated a, b, log_dt (or None for no change). The energy matrix is then
    rebuilt from the new a and X takes one orthogonalized shifted power step.
    """
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim == 1:
        x = x[:, None]
    current = DiagonalSSM(sys.a, sys.b, readout_from_x(x, sys.b), sys.log_dt)
    updated = grad_hook(current) if grad_hook is not None else None
    if updated is None:
        updated = current
    x_new = shifted_power_step(x, energy_matrix(updated.a))
    c_new = readout_from_x(x_new, updated.b)
    return DiagonalSSM(updated.a, updated.b, c_new, updated.log_dt), x_new
