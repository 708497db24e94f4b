"""Primal-dual view of the problem: moment (primal) and value (dual) variables.

The primal variable ``S`` is the accumulated second moment of the augmented
state ``[Ex; Eu; x - Ex; u - Eu]``; the dual variable ``X`` is the
block-diagonal Q-function kernel ``blockdiag(Xbar, X)``.  Both are
block-diagonal with two (n+m) blocks, mean part first.

Gain recovery from the dual variable uses

    F    = -(X22)^{-1} X12'
    Fbar = -(Xbar22)^{-1} Xbar12' + (X22)^{-1} X12'

The leading minus sign follows from the 12 block of the Q-function kernel
being ``M'`` (so that the greedy gain is ``-Ups^{-1} M``); it is what makes
the dual iteration coincide with policy iteration.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.linalg import block_diag

from .core import (
    GainPair,
    InitialStateEnsemble,
    MfSystem,
    WeightSpec,
    augmented_ops,
    min_eig,
    split_blocks,
    sym,
)
from .errors import DimensionMismatch, MaxIterExceeded, NotStabilizing, Singular11Block, Singular22Block
from .lyapunov import OperatorTriple, apply_dual, apply_primal, is_stabilizing, solve_gle_dual, solve_gle_primal
from .riccati import DEFAULT_EPS, DEFAULT_MAX_ITER

# Sign applied to (X22)^{-1} X12' in the primal update; recorded in traces.
PRIMAL_UPDATE_SIGN = -1


class _BlockDiag:
    """Shared accessors for (2n+2m) block-diagonal variables."""

    def __init__(self, M, n, m):
        M = np.asarray(M, dtype=float)
        k = n + m
        if M.shape != (2 * k, 2 * k):
            raise DimensionMismatch(f"expected a {2 * k}x{2 * k} matrix, got {M.shape}")
        self.full = sym(M)
        self.n, self.m = n, m

    @property
    def k(self):
        return self.n + self.m

    @property
    def mean_block(self):
        return self.full[: self.k, : self.k]

    @property
    def dev_block(self):
        return self.full[self.k:, self.k:]

    def mean_parts(self):
        return split_blocks(self.mean_block, self.n)

    def dev_parts(self):
        return split_blocks(self.dev_block, self.n)

    def cross_norm(self):
        return float(np.linalg.norm(self.full[: self.k, self.k:]))


class PrimalVar(_BlockDiag):
    """``blockdiag(Sbar, S)``: mean-part and centered-part moment blocks."""


class DualVar(_BlockDiag):
    """``blockdiag(Xbar, X)``: mean-part and centered-part Q kernels."""


def dual_update(sys: MfSystem, w: WeightSpec, g: GainPair) -> DualVar:
    """Solve the augmented dual equation at gains ``g``."""
    stable, radius = is_stabilizing(sys, g)
    if not stable:
        raise NotStabilizing(radius)
    k = sys.n + sys.m
    X = solve_gle_dual(augmented_ops(sys, g).triple(), w.augmented_weight(), blocks=(k, k))
    return DualVar(X, sys.n, sys.m)


def dual_update_full(sys, w, g) -> DualVar:
    """Same equation without the block-diagonal restriction."""
    X = solve_gle_dual(augmented_ops(sys, g).triple(), w.augmented_weight())
    return DualVar(X, sys.n, sys.m)


def _solve22(X22, X12, which):
    try:
        return sla.cho_solve(sla.cho_factor(X22), X12.T)
    except np.linalg.LinAlgError as exc:
        raise Singular22Block(f"{which} 22-block is not positive definite (min eig {min_eig(X22):.3e})") from exc


def primal_update(x: DualVar) -> GainPair:
    _, X12, X22 = x.dev_parts()
    _, Xb12, Xb22 = x.mean_parts()
    K = _solve22(X22, X12, "centered")
    Kb = _solve22(Xb22, Xb12, "mean")
    s = PRIMAL_UPDATE_SIGN
    return GainPair(s * K, s * (Kb - K))


@dataclass
class PdRecord:
    i: int
    F: np.ndarray
    Fbar: np.ndarray
    X: np.ndarray
    gain_change: float
    radius: float


@dataclass
class PdTrace:
    records: list = field(default_factory=list)
    converged: bool = False
    elapsed: float = 0.0
    sign_convention: str = "F = -(X22)^-1 X12'"
    final_gains: GainPair | None = None

    def gain_sequence(self):
        return [GainPair(r.F, r.Fbar) for r in self.records] + [self.final_gains]

    @property
    def iterations(self):
        return len(self.records)


def run_pd(sys, w, g0: GainPair, eps=DEFAULT_EPS, max_iter=DEFAULT_MAX_ITER, raise_on_max_iter=True) -> PdTrace:
    """Alternate :func:`dual_update` and :func:`primal_update`."""
    t0 = time.perf_counter()
    trace = PdTrace()
    g = g0
    for i in range(max_iter):
        stable, radius = is_stabilizing(sys, g)
        if not stable:
            raise NotStabilizing(radius)
        x = dual_update(sys, w, g)
        g_next = primal_update(x)
        change = g.distance(g_next)
        trace.records.append(PdRecord(i, g.F, g.Fbar, x.full, change, radius))
        trace.final_gains = g_next
        g = g_next
        if change <= eps:
            trace.converged = True
            break
    trace.elapsed = time.perf_counter() - t0
    if not trace.converged and raise_on_max_iter:
        raise MaxIterExceeded(f"primal-dual iteration did not reach eps={eps} in {max_iter} iterations", trace)
    return trace


def solve_primal(sys: MfSystem, g: GainPair, aleph) -> PrimalVar:
    """Primal moment matrix: ``S = sum_i Si S Si' + aleph``."""
    stable, radius = is_stabilizing(sys, g)
    if not stable:
        raise NotStabilizing(radius)
    k = sys.n + sys.m
    S = solve_gle_primal(augmented_ops(sys, g).triple(), aleph, blocks=(k, k))
    return PrimalVar(S, sys.n, sys.m)


def primal_objective(s: PrimalVar, w: WeightSpec) -> float:
    W = w.augmented_weight()
    if W.shape != s.full.shape:
        raise DimensionMismatch(f"weight is {W.shape} but primal variable is {s.full.shape}")
    return float(np.trace(W @ s.full))


def gains_from_primal(s: PrimalVar, cond_limit=1e12) -> GainPair:
    """Recover gains from moment blocks: ``F = S12' (S11)^{-1}``.

    Exact when the initial moment has the state-injection form
    ``F1 Z2 F1' + F2 (Z1 - Z2) F2'``.
    """
    S11, S12, _ = s.dev_parts()
    Sb11, Sb12, _ = s.mean_parts()
    for name, B in (("centered", S11), ("mean", Sb11)):
        if np.linalg.cond(B) > cond_limit:
            raise Singular11Block(f"{name} 11-block is singular (cond {np.linalg.cond(B):.3e})")
    K = np.linalg.solve(S11.T, S12).T
    Kb = np.linalg.solve(Sb11.T, Sb12).T
    return GainPair(K, Kb - K)


@dataclass(frozen=True)
class KktResiduals:
    r1: float
    r2: float
    r3: float
    r4: float
    r5: float
    Psi: np.ndarray

    def max_stationarity(self):
        return max(self.r1, self.r3, self.r4, self.r5)


def kkt_residuals(sys, w, s: PrimalVar, g: GainPair, x: DualVar, aleph) -> KktResiduals:
    """Residuals of the optimality system at ``(S, F, Fbar, X)``.

    ``r2`` is the smallest eigenvalue of ``S`` (should be positive); the
    others are Frobenius norms that vanish at the optimum.
    """
    ops = augmented_ops(sys, g)
    t = ops.triple()
    aleph = np.asarray(aleph, dtype=float)
    if aleph.shape != s.full.shape or x.full.shape != s.full.shape:
        raise DimensionMismatch("primal, dual and aleph must share one dimension")
    r1 = np.linalg.norm(apply_primal(t, s.full) + aleph - s.full)
    r2 = min_eig(s.full)
    r3 = np.linalg.norm(apply_dual(t, x.full) + w.augmented_weight() - x.full)

    Sbar, S = s.mean_block, s.dev_block
    _, Xb12, Xb22 = x.mean_parts()
    _, X12, X22 = x.dev_parts()
    AB1hat = np.hstack([sys.A1hat, sys.B1hat])
    AB1 = np.hstack([sys.A1, sys.B1])
    AB2 = np.hstack([sys.A2, sys.B2])
    AB2hat = np.hstack([sys.A2hat, sys.B2hat])
    r4 = np.linalg.norm((Xb12.T + Xb22 @ g.Fhat) @ AB1hat @ Sbar @ AB1hat.T)
    Psi = AB1 @ S @ AB1.T + AB2 @ S @ AB2.T + AB2hat @ Sbar @ AB2hat.T
    r5 = np.linalg.norm((X12.T + X22 @ g.F) @ Psi)
    return KktResiduals(float(r1), float(r2), float(r3), float(r4), float(r5), Psi)


def lagrangian(sys, w, aleph, g: GainPair, s: PrimalVar, x: DualVar) -> float:
    """``Tr(X aleph) + Tr[(dual map(X) + W - X) S]``, the dual-side arrangement."""
    t = augmented_ops(sys, g).triple()
    W = w.augmented_weight()
    return float(np.trace(x.full @ aleph) + np.trace((apply_dual(t, x.full) + W - x.full) @ s.full))


def dual_value(x: DualVar, aleph) -> float:
    """Dual objective ``Tr(X aleph)`` for a dual-feasible ``X``."""
    return float(np.trace(x.full @ np.asarray(aleph, dtype=float)))


def dual_slack(sys, w, g: GainPair, x: DualVar):
    """``dual map_g(X) + W - X``; PSD for every ``g`` when ``X`` is dual feasible."""
    t = augmented_ops(sys, g).triple()
    return sym(apply_dual(t, x.full) + w.augmented_weight() - x.full)


def duality_gap(sys, w, aleph, g_opt: GainPair, s_opt: PrimalVar, x_opt: DualVar) -> float:
    """``J_P - J_D`` at a claimed optimal quintuple."""
    return primal_objective(s_opt, w) - lagrangian(sys, w, aleph, g_opt, s_opt, x_opt)


@dataclass(frozen=True)
class PdSolution:
    gains: GainPair
    primal: PrimalVar
    dual: DualVar
    aleph: np.ndarray
    primal_value: float
    dual_value: float

    @property
    def gap(self):
        return self.primal_value - self.dual_value


def solve_optimum(sys, w, g0: GainPair, aleph, eps=DEFAULT_EPS, max_iter=DEFAULT_MAX_ITER) -> PdSolution:
    """Run the primal-dual iteration and assemble the optimal quintuple."""
    trace = run_pd(sys, w, g0, eps, max_iter)
    g = trace.final_gains
    s = solve_primal(sys, g, aleph)
    x = dual_update(sys, w, g)
    jp = primal_objective(s, w)
    jd = lagrangian(sys, w, aleph, g, s, x)
    return PdSolution(g, s, x, np.asarray(aleph), jp, jd)


def ensemble_aleph(ensemble: InitialStateEnsemble, g: GainPair):
    return ensemble.initial_moment(g)


def stacked_weight(w):
    return block_diag(w.Lam + w.Lambar, w.Lam)
