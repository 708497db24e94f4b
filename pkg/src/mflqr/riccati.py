"""Model-based solution path: coupled GAREs and policy iteration.

Value convention: ``P`` is the kernel of the centered state ``x - Ex`` and
``Pbar`` the kernel of the mean ``Ex``, so the cost of an initial ensemble
is ``Tr[(Z1 - Z2) P] + Tr[Z2 Pbar]``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.linalg import block_diag

from .core import (
    PSD_TOL,
    GainPair,
    MfSystem,
    WeightSpec,
    closed_loop_2n,
    min_eig,
    split_blocks,
    sym,
)
from .errors import DimensionMismatch, Divergence, MaxIterExceeded, NotStabilizing, SingularUps
from .lyapunov import is_stabilizing, solve_gle_dual

DEFAULT_EPS = 1e-10
DEFAULT_MAX_ITER = 500


@dataclass(frozen=True)
class ValuePair:
    P: np.ndarray
    Pbar: np.ndarray

    def to_dict(self):
        return {"P": self.P.tolist(), "Pbar": self.Pbar.tolist()}


@dataclass(frozen=True)
class RiccatiTerms:
    Ups1: np.ndarray
    M1: np.ndarray
    Ups2: np.ndarray
    M2: np.ndarray

    @property
    def min_eig_Ups1(self):
        return min_eig(self.Ups1)

    @property
    def min_eig_Ups2(self):
        return min_eig(self.Ups2)


@dataclass(frozen=True)
class QMatrices:
    """Q-function kernels for the centered (``X``) and mean (``Xbar``) parts."""

    X: np.ndarray
    Xbar: np.ndarray
    n: int

    def blocks(self):
        return split_blocks(self.X, self.n)

    def bar_blocks(self):
        return split_blocks(self.Xbar, self.n)

    def stacked(self):
        """``blockdiag(Xbar, X)``, the layout of the dual variable."""
        return block_diag(self.Xbar, self.X)


def _check_dims(sys, w, v=None):
    if (w.n, w.m) != (sys.n, sys.m):
        raise DimensionMismatch(f"weights are ({w.n}, {w.m}) but system is ({sys.n}, {sys.m})")
    if v is not None and (v.P.shape != (sys.n, sys.n) or v.Pbar.shape != (sys.n, sys.n)):
        raise DimensionMismatch("value matrices must be n x n")


def riccati_terms(sys: MfSystem, w: WeightSpec, v: ValuePair) -> RiccatiTerms:
    _check_dims(sys, w, v)
    P, Pb = v.P, v.Pbar
    Ups1 = w.R + sys.B1.T @ P @ sys.B1 + sys.B2.T @ P @ sys.B2
    M1 = sys.B1.T @ P @ sys.A1 + sys.B2.T @ P @ sys.A2
    Ups2 = w.Rhat + sys.B1hat.T @ Pb @ sys.B1hat + sys.B2hat.T @ P @ sys.B2hat
    M2 = sys.B1hat.T @ Pb @ sys.A1hat + sys.B2hat.T @ P @ sys.A2hat
    return RiccatiTerms(sym(Ups1), M1, sym(Ups2), M2)


def _spd_solve(U, rhs, which):
    try:
        return sla.cho_solve(sla.cho_factor(U), rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularUps(f"{which} is not positive definite (min eig {min_eig(U):.3e})") from exc


def gain_from_values(sys: MfSystem, w: WeightSpec, v: ValuePair) -> GainPair:
    t = riccati_terms(sys, w, v)
    K1 = _spd_solve(t.Ups1, t.M1, "Ups1")
    K2 = _spd_solve(t.Ups2, t.M2, "Ups2")
    return GainPair(-K1, -(K2 - K1))


def gare_rhs(sys: MfSystem, w: WeightSpec, v: ValuePair) -> ValuePair:
    """Right-hand sides of both GAREs evaluated at ``v``."""
    t = riccati_terms(sys, w, v)
    P, Pb = v.P, v.Pbar
    rhs1 = w.Q + sys.A1.T @ P @ sys.A1 + sys.A2.T @ P @ sys.A2 - t.M1.T @ _spd_solve(t.Ups1, t.M1, "Ups1")
    rhs2 = (
        w.Qhat
        + sys.A1hat.T @ Pb @ sys.A1hat
        + sys.A2hat.T @ P @ sys.A2hat
        - t.M2.T @ _spd_solve(t.Ups2, t.M2, "Ups2")
    )
    return ValuePair(sym(rhs1), sym(rhs2))


def gare_residual(sys: MfSystem, w: WeightSpec, v: ValuePair):
    rhs = gare_rhs(sys, w, v)
    return v.P - rhs.P, v.Pbar - rhs.Pbar


def gare_residual_norm(sys, w, v):
    r1, r2 = gare_residual(sys, w, v)
    return float(max(np.linalg.norm(r1), np.linalg.norm(r2)))


def evaluation_weight(w: WeightSpec, g: GainPair):
    """``blockdiag(Qhat + Fhat' Rhat Fhat, Q + F' R F)``."""
    return block_diag(w.Qhat + g.Fhat.T @ w.Rhat @ g.Fhat, w.Q + g.F.T @ w.R @ g.F)


def policy_evaluation(sys: MfSystem, w: WeightSpec, g: GainPair) -> ValuePair:
    """Solve the block-diagonal evaluation equation at gains ``g``."""
    _check_dims(sys, w)
    stable, radius = is_stabilizing(sys, g)
    if not stable:
        raise NotStabilizing(radius)
    n = sys.n
    X = solve_gle_dual(closed_loop_2n(sys, g).triple(), evaluation_weight(w, g), blocks=(n, n))
    return ValuePair(sym(X[n:, n:]), sym(X[:n, :n]))


@dataclass
class PiRecord:
    i: int
    F: np.ndarray
    Fbar: np.ndarray
    P: np.ndarray
    Pbar: np.ndarray
    gain_change: float
    radius: float


@dataclass
class PiTrace:
    records: list = field(default_factory=list)
    converged: bool = False
    elapsed: float = 0.0

    @property
    def final(self):
        return self.records[-1]

    @property
    def gains(self):
        """Gains after the last improvement step."""
        return self._final_gains

    @property
    def values(self):
        r = self.final
        return ValuePair(r.P, r.Pbar)

    def gain_sequence(self):
        """``[g^0, g^1, ...]`` including the last improved gains."""
        seq = [GainPair(r.F, r.Fbar) for r in self.records]
        return seq + [self._final_gains]

    @property
    def iterations(self):
        return len(self.records)


def run_pi(sys, w, g0: GainPair, eps=DEFAULT_EPS, max_iter=DEFAULT_MAX_ITER, raise_on_max_iter=True) -> PiTrace:
    """Policy iteration on the coupled GAREs.

    Record ``i`` holds the gains ``g^i``, the evaluated values at ``g^i`` and
    ``||g^i - g^{i+1}||``.  Iteration stops once that change is at most
    ``eps``.
    """
    t0 = time.perf_counter()
    stable, radius = is_stabilizing(sys, g0)
    if not stable:
        raise NotStabilizing(radius)
    trace = PiTrace()
    g = g0
    for i in range(max_iter):
        stable, radius = is_stabilizing(sys, g)
        if not stable:
            raise NotStabilizing(radius)
        v = policy_evaluation(sys, w, g)
        g_next = gain_from_values(sys, w, v)
        change = g.distance(g_next)
        trace.records.append(PiRecord(i, g.F, g.Fbar, v.P, v.Pbar, change, radius))
        trace._final_gains = g_next
        g = g_next
        if change <= eps:
            trace.converged = True
            break
    trace.elapsed = time.perf_counter() - t0
    if not trace.converged and raise_on_max_iter:
        raise MaxIterExceeded(f"policy iteration did not reach eps={eps} in {max_iter} iterations", trace)
    return trace


def value_iteration_oracle(sys, w, sweeps=2000, bound=1e12, tol=0.0) -> ValuePair:
    """Fixed-point sweeps of the GARE right-hand sides from ``P = Pbar = 0``.

    Independent of policy iteration; used as a reference solution.  Stops
    early once a sweep changes the values by at most ``tol``.
    """
    _check_dims(sys, w)
    n = sys.n
    v = ValuePair(np.zeros((n, n)), np.zeros((n, n)))
    for _ in range(sweeps):
        prev, v = v, gare_rhs(sys, w, v)
        if tol and np.linalg.norm(v.P - prev.P) + np.linalg.norm(v.Pbar - prev.Pbar) <= tol:
            break
        if not (np.all(np.isfinite(v.P)) and np.all(np.isfinite(v.Pbar))):
            raise Divergence("value iteration produced non-finite values")
        if max(np.linalg.norm(v.P), np.linalg.norm(v.Pbar)) > bound:
            raise Divergence(f"value iteration exceeded norm bound {bound:g}")
    return v


def q_matrices(sys: MfSystem, w: WeightSpec, v: ValuePair) -> QMatrices:
    t = riccati_terms(sys, w, v)
    P, Pb = v.P, v.Pbar
    X11 = w.Q + sys.A1.T @ P @ sys.A1 + sys.A2.T @ P @ sys.A2
    Xb11 = w.Qhat + sys.A1hat.T @ Pb @ sys.A1hat + sys.A2hat.T @ P @ sys.A2hat
    X = np.block([[X11, t.M1.T], [t.M1, t.Ups1]])
    Xbar = np.block([[Xb11, t.M2.T], [t.M2, t.Ups2]])
    return QMatrices(sym(X), sym(Xbar), sys.n)


def optimal_cost(v: ValuePair, Z1, Z2) -> float:
    """Ensemble cost ``Tr[(Z1 - Z2) P] + Tr[Z2 Pbar]``."""
    Z1 = np.asarray(Z1, dtype=float)
    Z2 = np.asarray(Z2, dtype=float)
    if Z1.shape != v.P.shape or Z2.shape != v.P.shape:
        raise DimensionMismatch("Z1, Z2 must match the value matrices")
    return float(np.trace((Z1 - Z2) @ v.P) + np.trace(Z2 @ v.Pbar))


def find_stabilizing_gains(sys, radius0=1.0, attempts=200, shrink=0.95, seed=0) -> GainPair:
    """Random search for stabilizing gains, used when none are supplied.

    Tries zero gains first, then Gaussian samples whose scale shrinks
    geometrically.
    """
    g = GainPair.zeros(sys.n, sys.m)
    best = is_stabilizing(sys, g)
    if best[0]:
        return g
    rng = np.random.default_rng(seed)
    scale = radius0
    for _ in range(attempts):
        cand = GainPair(
            scale * rng.standard_normal((sys.m, sys.n)), scale * rng.standard_normal((sys.m, sys.n))
        )
        ok, radius = is_stabilizing(sys, cand)
        if ok:
            return cand
        scale *= shrink
    raise NotStabilizing(best[1])


def evaluation_identity_residual(sys, w, v_i: ValuePair, g_next: GainPair, g_i: GainPair) -> float:
    """Residual of the evaluation identity written with the improved gains.

    ``diag(Pbar^i, P^i)`` satisfies the evaluation equation at ``g^{i+1}``
    with the weight augmented by ``dF' diag(Ups2, Ups1) dF``.
    """
    n = sys.n
    t = riccati_terms(sys, w, v_i)
    dFhat = g_i.Fhat - g_next.Fhat
    dF = g_i.F - g_next.F
    D = block_diag(dFhat, dF)
    U = block_diag(t.Ups2, t.Ups1)
    W = evaluation_weight(w, g_next) + D.T @ U @ D
    Pblk = block_diag(v_i.Pbar, v_i.P)
    cl = closed_loop_2n(sys, g_next)
    rhs = W + sum(M.T @ Pblk @ M for M in cl.triple())
    return float(np.linalg.norm(Pblk - rhs))


def is_psd_pair(v: ValuePair, tol=PSD_TOL):
    return min_eig(v.P) >= -tol and min_eig(v.Pbar) >= -tol
