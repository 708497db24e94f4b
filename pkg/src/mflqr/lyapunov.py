"""Generalized Lyapunov operators and dense solvers.

For a coefficient triple (M1, M2, M3) two maps on symmetric matrices are
used throughout:

    dual   X -> M1' X M1 + M2' X M2 + M3' X M3
    primal S -> M1 S M1' + M2 S M2' + M3 S M3'

They are adjoint under the trace inner product and share one spectrum; the
spectral radius below 1 is the mean-square stability test.  Both generalized
Lyapunov equations are solved by a direct dense solve of the vectorized
system, which is exact at the sizes handled here (d <= ~20).
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .core import GainPair, MfSystem, closed_loop_2n, sym
from .errors import DimensionMismatch, EigenFailure, SingularSystem, Unstable

STABILITY_MARGIN = 1e-9


class OperatorTriple(NamedTuple):
    M1: np.ndarray
    M2: np.ndarray
    M3: np.ndarray

    @property
    def d(self):
        return self.M1.shape[0]

    def check(self):
        d = self.M1.shape[0]
        for i, M in enumerate(self):
            if M.ndim != 2 or M.shape != (d, d):
                raise DimensionMismatch(f"M{i + 1} has shape {M.shape}, expected ({d}, {d})")
        return self


def _vec(X):
    return np.asarray(X).reshape(-1, order="F")


def _unvec(x, d):
    return x.reshape((d, d), order="F")


def operator_matrix(t: OperatorTriple) -> np.ndarray:
    """Matrix of the dual map acting on column-stacked ``X``.

    Uses ``vec(M' X M) = (M' kron M') vec(X)``.
    """
    t = OperatorTriple(*t).check()
    return sum(np.kron(M.T, M.T) for M in t)


def primal_operator_matrix(t: OperatorTriple) -> np.ndarray:
    t = OperatorTriple(*t).check()
    return sum(np.kron(M, M) for M in t)


def apply_dual(t: OperatorTriple, X):
    return sum(M.T @ X @ M for M in t)


def apply_primal(t: OperatorTriple, S):
    return sum(M @ S @ M.T for M in t)


def spectral_radius(T) -> float:
    T = np.asarray(T, dtype=float)
    if not np.all(np.isfinite(T)):
        raise EigenFailure("operator matrix contains non-finite entries")
    if T.size == 0:
        return 0.0
    try:
        ev = np.linalg.eigvals(T)
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(str(exc)) from exc
    return float(np.max(np.abs(ev)))


def operator_radius(t: OperatorTriple) -> float:
    return spectral_radius(operator_matrix(t))


def is_stabilizing(sys: MfSystem, g: GainPair, margin: float = STABILITY_MARGIN):
    """Return ``(stable, radius)`` for the 2n closed-loop operator."""
    radius = operator_radius(closed_loop_2n(sys, g).triple())
    return radius < 1.0 - margin, radius


def _block_index(d, blocks):
    """Column-stacked positions of the entries inside the diagonal blocks."""
    if sum(blocks) != d:
        raise DimensionMismatch(f"block sizes {blocks} do not sum to {d}")
    mask = np.zeros((d, d), dtype=bool)
    start = 0
    for b in blocks:
        mask[start:start + b, start:start + b] = True
        start += b
    return np.flatnonzero(_vec(mask))


def _solve_vectorized(T, rhs, d, blocks, radius):
    if radius >= 1.0 - STABILITY_MARGIN:
        raise Unstable(radius)
    b = _vec(rhs)
    if blocks is None:
        A = np.eye(d * d) - T
        try:
            x = np.linalg.solve(A, b)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(str(exc)) from exc
        return sym(_unvec(x, d))
    idx = _block_index(d, blocks)
    A = np.eye(idx.size) - T[np.ix_(idx, idx)]
    try:
        xs = np.linalg.solve(A, b[idx])
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    x = np.zeros(d * d)
    x[idx] = xs
    return sym(_unvec(x, d))


def _check_residual(X, residual, what):
    tol = 1e-10 * (1.0 + np.linalg.norm(X))
    if not np.isfinite(residual) or residual > tol:
        raise SingularSystem(f"{what} residual {residual:.3e} exceeds {tol:.3e}")


def solve_gle_dual(t: OperatorTriple, Qrhs, blocks=None) -> np.ndarray:
    """Solve ``X = sum_i Mi' X Mi + Qrhs``.

    ``blocks`` restricts the unknown to a block-diagonal matrix with the given
    block sizes; valid when the dual map preserves that pattern.
    """
    t = OperatorTriple(*t).check()
    Qrhs = np.asarray(Qrhs, dtype=float)
    d = t.d
    if Qrhs.shape != (d, d):
        raise DimensionMismatch(f"right-hand side has shape {Qrhs.shape}, expected ({d}, {d})")
    T = operator_matrix(t)
    X = _solve_vectorized(T, sym(Qrhs), d, blocks, spectral_radius(T))
    _check_residual(X, np.linalg.norm(X - apply_dual(t, X) - sym(Qrhs)), "dual GLE")
    return X


def solve_gle_primal(t: OperatorTriple, N, blocks=None) -> np.ndarray:
    """Solve ``S = sum_i Mi S Mi' + N``."""
    t = OperatorTriple(*t).check()
    N = np.asarray(N, dtype=float)
    d = t.d
    if N.shape != (d, d):
        raise DimensionMismatch(f"right-hand side has shape {N.shape}, expected ({d}, {d})")
    T = primal_operator_matrix(t)
    S = _solve_vectorized(T, sym(N), d, blocks, spectral_radius(T))
    _check_residual(S, np.linalg.norm(S - apply_primal(t, S) - sym(N)), "primal GLE")
    return S


def truncated_dual_sum(t: OperatorTriple, Qrhs, K):
    """``sum_{k=0}^{K} (dual map)^k (Qrhs)``; reference for :func:`solve_gle_dual`."""
    Y = np.array(Qrhs, dtype=float)
    total = Y.copy()
    for _ in range(K):
        Y = apply_dual(t, Y)
        total += Y
    return total


def truncated_primal_sum(t: OperatorTriple, N, K):
    Y = np.array(N, dtype=float)
    total = Y.copy()
    for _ in range(K):
        Y = apply_primal(t, Y)
        total += Y
    return total
