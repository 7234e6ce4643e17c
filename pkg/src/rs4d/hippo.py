"""HiPPO-LegS matrix, its normal-plus-low-rank split, and the unitary
conjugation to diagonal-plus-low-rank form."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rs4d.errors import SizeError
from rs4d.numerics import skew_eig


@dataclass(frozen=True)
class HippoMatrix:
    n: int
    dense: np.ndarray


@dataclass(frozen=True)
class NplrParts:
    p: np.ndarray  # rank-1 factor, length n
    s: np.ndarray  # skew-symmetric part, n x n


@dataclass(frozen=True)
class DplrSystem:
    """Dynamics diag(lambda_) - p q*, input b, readout c (channels x n).

    ``unitary`` is the conjugating V; only tests look at it.
    """

    lambda_: np.ndarray
    p: np.ndarray
    q: np.ndarray
    b: np.ndarray
    c: np.ndarray
    unitary: np.ndarray

    @property
    def n(self) -> int:
        return len(self.lambda_)

    def dense(self) -> np.ndarray:
        return np.diag(self.lambda_) - np.outer(self.p, self.q.conj())


def build_hippo(n: int) -> HippoMatrix:
    """Zero-based LegS matrix: -(2i+1)^.5 (2k+1)^.5 below, -(i+1) on the diagonal."""
    if n < 1:
        raise SizeError("state size must be >= 1")
    r = np.sqrt(2.0 * np.arange(n) + 1.0)
    a = -np.tril(np.outer(r, r), -1) - np.diag(np.arange(1.0, n + 1.0))
    return HippoMatrix(n, a.astype(np.complex128))


def nplr_decompose(h: HippoMatrix) -> NplrParts:
    n = h.n
    p = np.sqrt(np.arange(n) + 0.5)
    r = np.sqrt(2.0 * np.arange(n) + 1.0)
    outer = 0.5 * np.outer(r, r)
    s = -np.tril(outer, -1) + np.triu(outer, 1)
    return NplrParts(p.astype(np.complex128), s.astype(np.complex128))


def to_dplr(parts: NplrParts, b=None, c=None) -> DplrSystem:
    """Conjugate A = -I/2 + S - PP^T by the eigenvectors of S.

    ``b`` and ``c`` are given in the original basis and transformed as
    V*b and cV; both default to ones.
    """
    n = len(parts.p)
    eigs, v = skew_eig(parts.s)
    lam = 1j * eigs.imag - 0.5
    pv = v.conj().T @ parts.p
    b0 = np.ones(n, dtype=np.complex128) if b is None else np.asarray(b, np.complex128)
    c0 = np.ones((1, n), dtype=np.complex128) if c is None else np.atleast_2d(np.asarray(c, np.complex128))
    return DplrSystem(
        lambda_=lam,
        p=pv,
        q=pv.copy(),
        b=v.conj().T @ b0,
        c=c0 @ v,
        unitary=v,
    )


def hippo_dplr(n: int, b=None, c=None) -> DplrSystem:
    return to_dplr(nplr_decompose(build_hippo(n)), b=b, c=c)
