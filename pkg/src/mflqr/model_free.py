"""Primal-dual learning without the drift matrices.

Only the diffusion matrices and the weights are known.  The drift enters
through trajectory data alone: with ``S^M = sum_k E[V_k V_k']`` and
``W^M = sum_k E[V_k V_{k+1}']`` the dual equation multiplied by ``S^M`` on
both sides becomes

    W X W' + S (S2' X S2 + S3' X S3 + W_cost - X) S = 0,

which is linear in the block-diagonal symmetric unknown ``X`` and needs no
drift term (``S2`` and ``S3`` depend only on the diffusion matrices and
``F``).
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .core import GainPair, InitialStateEnsemble, MfSystem, WeightSpec, diffusion_ops, min_eig, sym
from .errors import DimensionMismatch, DivergentRollout, IllConditioned, MaxIterExceeded, NonFiniteState, SingularData
from .primal_dual import DualVar, primal_update
from .riccati import DEFAULT_EPS
from .simulator import DataMatrices, NoiseModel, data_matrices, exact_moments, rollout

COND_LIMIT = 1e12
PD_FLOOR = 1e-10


@dataclass(frozen=True)
class PartialModel:
    """Diffusion matrices and weights; deliberately has no drift fields."""

    A2: np.ndarray
    A2bar: np.ndarray
    B2: np.ndarray
    B2bar: np.ndarray
    weights: WeightSpec

    def __post_init__(self):
        n, m = self.weights.n, self.weights.m
        for name, shape in (("A2", (n, n)), ("A2bar", (n, n)), ("B2", (n, m)), ("B2bar", (n, m))):
            M = np.array(getattr(self, name), dtype=float)
            if M.shape != shape:
                raise DimensionMismatch(f"{name} has shape {M.shape}, expected {shape}")
            M.setflags(write=False)
            object.__setattr__(self, name, M)

    @classmethod
    def from_system(cls, sys: MfSystem, w: WeightSpec):
        return cls(sys.A2, sys.A2bar, sys.B2, sys.B2bar, w)

    @property
    def n(self):
        return self.weights.n

    @property
    def m(self):
        return self.weights.m

    def diffusion(self, g: GainPair):
        return diffusion_ops(self.A2, self.A2 + self.A2bar, self.B2, self.B2 + self.B2bar, g.F)


@dataclass(frozen=True)
class DataDualResult:
    dual: DualVar
    residual: float
    cond: float
    repaired: bool


def _basis_index(k):
    """(block, i, j) for the upper-triangular entries of both diagonal blocks."""
    iu = np.triu_indices(k)
    return [(b, i, j) for b in (0, 1) for i, j in zip(*iu)]


def _normalize(d: DataMatrices, k):
    """Scale each diagonal block of (S, W) by its own norm; the equation is invariant to this."""
    S, W = d.SM.copy(), d.WM.copy()
    for sl in (slice(0, k), slice(k, 2 * k)):
        c = np.linalg.norm(S[sl, sl])
        S[sl, sl] /= c
        W[sl, sl] /= c
    return S, W


def _repair22(Xb, k, n):
    """Lift a 22-block with eigenvalues below ``PD_FLOOR`` to ``PD_FLOOR``."""
    repaired = False
    for sl in (slice(n, k), slice(k + n, 2 * k)):
        vals, vecs = np.linalg.eigh(Xb[sl, sl])
        if vals.min() < PD_FLOOR:
            Xb[sl, sl] = (vecs * np.maximum(vals, PD_FLOOR)) @ vecs.T
            repaired = True
    return Xb, repaired


def data_dual_update(pm: PartialModel, g: GainPair, d: DataMatrices, cond_limit=COND_LIMIT) -> DataDualResult:
    """Least-squares solution of the data-driven dual equation."""
    n, m = pm.n, pm.m
    k = n + m
    if d.SM.shape != (2 * k, 2 * k) or d.WM.shape != (2 * k, 2 * k):
        raise DimensionMismatch(f"data matrices must be {2 * k}x{2 * k}")
    if d.min_eig <= 0:
        raise SingularData(f"S^M is not positive definite (min eig {d.min_eig:.3e})")
    S, W = _normalize(d, k)
    S2, S3 = pm.diffusion(g)
    Wc = pm.weights.augmented_weight()

    def L(X):
        return W @ X @ W.T + S @ (S2.T @ X @ S2 + S3.T @ X @ S3 - X) @ S

    basis = _basis_index(k)
    rows = [(b * k + i, b * k + j) for b, i, j in basis]
    ri = np.array([r for r, _ in rows])
    ci = np.array([c for _, c in rows])
    A = np.empty((len(rows), len(basis)))
    for col, (b, i, j) in enumerate(basis):
        E = np.zeros((2 * k, 2 * k))
        E[b * k + i, b * k + j] = E[b * k + j, b * k + i] = 1.0
        A[:, col] = L(E)[ri, ci]
    rhs = -(S @ Wc @ S)[ri, ci]
    cond = float(np.linalg.cond(A))
    if not np.isfinite(cond) or cond > cond_limit:
        raise IllConditioned(f"data equation condition number {cond:.3e} exceeds {cond_limit:.1e}")
    theta, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    X = np.zeros((2 * k, 2 * k))
    for val, (b, i, j) in zip(theta, basis):
        X[b * k + i, b * k + j] = X[b * k + j, b * k + i] = val
    residual = float(np.linalg.norm(L(X) + S @ Wc @ S) / np.linalg.norm(S @ Wc @ S))
    X, repaired = _repair22(X, k, n)
    return DataDualResult(DualVar(X, n, m), residual, cond, repaired)


class SampledData:
    """Collects rollouts from a simulated plant; the learner sees only data."""

    def __init__(self, plant: MfSystem, ensemble: InitialStateEnsemble, M=100, H=30, noise=NoiseModel(), mode="sample-mean"):
        self._plant = plant
        self.ensemble = ensemble
        self.M, self.H, self.noise, self.mode = M, H, noise, mode

    def collect(self, g: GainPair, epoch: int) -> DataMatrices:
        batch = rollout(self._plant, g, self.ensemble, self.M, self.H, self.noise.at_epoch(epoch), self.mode)
        return data_matrices(batch)


class ExactData:
    """Oracle data: exact moments in place of sample averages."""

    def __init__(self, plant: MfSystem, ensemble: InitialStateEnsemble, M=500):
        self._plant = plant
        self.ensemble = ensemble
        self.M = M

    def collect(self, g: GainPair, epoch: int) -> DataMatrices:
        return exact_moments(self._plant, g, self.ensemble, self.M).data


@dataclass
class PdmfRecord:
    i: int
    F: np.ndarray
    Fbar: np.ndarray
    X: np.ndarray
    residual: float
    gain_change: float
    sm_min_eig: float
    cond: float
    repaired: bool
    gain_err_F: float = float("nan")
    gain_err_Fbar: float = float("nan")
    diverged: bool = False


@dataclass
class PdmfTrace:
    records: list = field(default_factory=list)
    converged: bool = False
    max_iter_reached: bool = False
    diverged: bool = False
    elapsed: float = 0.0
    seeds: list = field(default_factory=list)
    final_gains: GainPair | None = None

    @property
    def iterations(self):
        return len(self.records)

    def gain_sequence(self):
        return [GainPair(r.F, r.Fbar) for r in self.records] + ([self.final_gains] if self.final_gains else [])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "gain_err_F", "gain_err_Fbar", "kkt33_residual", "sm_min_eig", "diverged_flag"])
            for r in self.records:
                writer.writerow(
                    [r.i, f"{r.gain_err_F:.17g}", f"{r.gain_err_Fbar:.17g}", f"{r.residual:.17g}",
                     f"{r.sm_min_eig:.17g}", int(r.diverged)]
                )


def run_pdmf(pm: PartialModel, source, g0: GainPair, eps=DEFAULT_EPS, max_iter=30, reference: GainPair | None = None,
             raise_on_max_iter=False) -> PdmfTrace:
    """Learn gains from data collected by ``source`` at the current gains.

    Each iteration draws fresh data (epoch ``i``).  Without convergence the
    loop stops after ``max_iter`` iterations and flags it in the trace.
    ``reference`` only feeds the error columns of the trace.
    """
    t0 = time.perf_counter()
    trace = PdmfTrace()
    g = g0
    for i in range(max_iter):
        try:
            d = source.collect(g, i)
        except NonFiniteState as exc:
            trace.diverged = True
            trace.records.append(
                PdmfRecord(i, g.F, g.Fbar, np.full((2 * (pm.n + pm.m),) * 2, np.nan), float("nan"), float("nan"),
                           float("nan"), float("nan"), False, *_errors(g, reference), diverged=True)
            )
            trace.elapsed = time.perf_counter() - t0
            raise DivergentRollout(f"rollout diverged at iteration {i}: {exc}", trace) from exc
        trace.seeds.append(i)
        res = data_dual_update(pm, g, d)
        g_next = primal_update(res.dual)
        change = g.distance(g_next)
        trace.records.append(
            PdmfRecord(i, g.F, g.Fbar, res.dual.full, res.residual, change, d.min_eig, res.cond, res.repaired,
                       *_errors(g, reference))
        )
        trace.final_gains = g_next
        g = g_next
        if change <= eps:
            trace.converged = True
            break
    else:
        trace.max_iter_reached = True
    trace.elapsed = time.perf_counter() - t0
    if trace.max_iter_reached and raise_on_max_iter:
        raise MaxIterExceeded(f"learning did not reach eps={eps} in {max_iter} iterations", trace)
    return trace


def _errors(g, ref):
    if ref is None:
        return float("nan"), float("nan")
    return float(np.linalg.norm(g.F - ref.F)), float(np.linalg.norm(g.Fbar - ref.Fbar))


def hat_error(g: GainPair, ref: GainPair) -> float:
    return float(np.linalg.norm(g.Fhat - ref.Fhat))
