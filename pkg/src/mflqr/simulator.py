"""Monte Carlo rollouts, moment estimates and the exact moment oracle.

Each ensemble member ``l`` is the random initial state
``z = mean_l + xi * dev_l`` with ``xi`` zero-mean and unit-variance.  Member
``l`` is simulated with ``H`` rollouts that share the population mean
``Ex_k``.  Two ways of obtaining that mean are supported:

``"sample-mean"``
    the average over the ``H`` rollouts at every step (what a learner
    observing data would do).  The initial signs ``xi`` are antithetic
    (+1/-1 alternating), so the step-0 sample mean is exact for even ``H``.
``"exact-mean"``
    the deterministic mean recursion, with ``xi`` drawn iid.  Used for
    unbiased cost estimates and oracle tests.

Random streams are keyed by ``(seed, epoch, l, h)`` so a batch is reproducible
independently of how the work is scheduled.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import GainPair, InitialStateEnsemble, MfSystem, WeightSpec, augmented_ops, min_eig, sym
from .errors import (
    DimensionMismatch,
    InsufficientRollouts,
    InvalidHorizon,
    NonFiniteState,
    RankDeficient,
    RankDeficientRegressor,
)
from .lyapunov import apply_primal, is_stabilizing

DIVERGENCE_BOUND = 1e8
MODES = ("sample-mean", "exact-mean")


@dataclass(frozen=True)
class NoiseModel:
    kind: str = "normal"
    seed: int = 0
    epoch: int = 0

    def __post_init__(self):
        if self.kind not in ("normal", "rademacher"):
            raise ValueError(f"unknown noise kind {self.kind!r}")

    def stream(self, l, h):
        return np.random.default_rng([self.seed, self.epoch, l, h])

    def at_epoch(self, epoch):
        return NoiseModel(self.kind, self.seed, epoch)

    def draw(self, rng, size):
        if self.kind == "normal":
            return rng.standard_normal(size)
        return rng.choice([-1.0, 1.0], size=size)


@dataclass(frozen=True)
class TrajectoryBatch:
    """States ``x[l, h, k]`` and inputs ``u[l, h, k]`` for ``k = 0..M+1``.

    ``Ex``/``Eu`` hold the mean used by the controller (sample or exact).
    """

    x: np.ndarray
    u: np.ndarray
    w: np.ndarray
    Ex: np.ndarray
    Eu: np.ndarray
    mode: str
    seed: int

    @property
    def r(self):
        return self.x.shape[0]

    @property
    def H(self):
        return self.x.shape[1]

    @property
    def M(self):
        return self.x.shape[2] - 2

    @property
    def n(self):
        return self.x.shape[3]

    @property
    def m(self):
        return self.u.shape[3]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["l", "h", "k"] + [f"x_{i + 1}" for i in range(self.n)] + [f"u_{j + 1}" for j in range(self.m)] + ["w"]
            )
            for l in range(self.r):
                for h in range(self.H):
                    for k in range(self.M + 2):
                        row = [l, h, k]
                        row += [f"{v:.17g}" for v in self.x[l, h, k]]
                        row += [f"{v:.17g}" for v in self.u[l, h, k]]
                        row.append(f"{self.w[l, h, k]:.17g}")
                        writer.writerow(row)


@dataclass(frozen=True)
class DataMatrices:
    SM: np.ndarray
    WM: np.ndarray
    M: int
    H: int
    r: int

    @property
    def min_eig(self):
        return min_eig(self.SM)


def _workers():
    try:
        return max(1, int(os.environ.get("MFLQR_THREADS", "1")))
    except ValueError:
        return 1


def _draw_streams(noise: NoiseModel, r, H, steps, iid_signs):
    """Noise ``w[l, h, k]`` and initial signs ``xi[l, h]`` from per-(l, h) streams."""

    def member(l):
        w = np.empty((H, steps))
        xi = np.empty(H)
        for h in range(H):
            rng = noise.stream(l, h)
            xi[h] = rng.choice([-1.0, 1.0]) if iid_signs else (1.0 if h % 2 == 0 else -1.0)
            w[h] = noise.draw(rng, steps)
        return w, xi

    workers = min(_workers(), r)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(member, range(r)))
    else:
        parts = [member(l) for l in range(r)]
    return np.stack([p[0] for p in parts]), np.stack([p[1] for p in parts])


def _check_args(sys, g, ensemble, M, H, mode):
    if M < 0:
        raise InvalidHorizon(f"horizon M must be >= 0, got {M}")
    if H < 1:
        raise InvalidHorizon(f"rollout count H must be >= 1, got {H}")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if ensemble.n != sys.n or g.F.shape != (sys.m, sys.n):
        raise DimensionMismatch("ensemble, gains and system dimensions disagree")


def _steps(sys, g, ensemble, w, xi, mode, bound):
    """Yield ``(k, x_k, u_k, Ex_k, Eu_k)`` for ``k = 0..w.shape[2]-1``.

    Arrays are (r, H, .) for states/inputs and (r, .) for means.
    """
    steps = w.shape[2]
    x = ensemble.means[:, None, :] + xi[:, :, None] * ensemble.deviations[:, None, :]
    Ex = ensemble.means if mode == "exact-mean" else x.mean(axis=1)
    for k in range(steps):
        if k == 0 and ensemble.has_inputs:
            u = ensemble.input_means[:, None, :] + xi[:, :, None] * ensemble.input_deviations[:, None, :]
            Eu = ensemble.input_means if mode == "exact-mean" else u.mean(axis=1)
        else:
            u = x @ g.F.T + (Ex @ g.Fbar.T)[:, None, :]
            Eu = Ex @ g.Fhat.T
        yield k, x, u, Ex, Eu
        if k == steps - 1:
            return
        ex, eu = Ex[:, None, :], Eu[:, None, :]
        drift = x @ sys.A1.T + ex @ sys.A1bar.T + u @ sys.B1.T + eu @ sys.B1bar.T
        diff = x @ sys.A2.T + ex @ sys.A2bar.T + u @ sys.B2.T + eu @ sys.B2bar.T
        x = drift + diff * w[:, :, k, None]
        if mode == "exact-mean":
            Ex = Ex @ sys.A1hat.T + Eu @ sys.B1hat.T
        else:
            Ex = x.mean(axis=1)
        bad = ~np.isfinite(x) | (np.abs(x) > bound)
        if bad.any():
            l, h, _ = np.argwhere(bad)[0]
            raise NonFiniteState((int(l), int(h), k + 1))


def rollout(
    sys: MfSystem,
    g: GainPair,
    ensemble: InitialStateEnsemble,
    M: int,
    H: int,
    noise: NoiseModel = NoiseModel(),
    mode: str = "sample-mean",
    bound: float = DIVERGENCE_BOUND,
) -> TrajectoryBatch:
    """Simulate ``H`` rollouts per ensemble member over ``k = 0..M+1``.

    At ``k = 0`` the input is the ensemble's free initial input when present
    (``mean_u + xi * dev_u``) and the feedback law otherwise.  The controller
    uses the sample mean or the exact mean according to ``mode``.
    """
    _check_args(sys, g, ensemble, M, H, mode)
    n, m, r = sys.n, sys.m, ensemble.r
    steps = M + 2
    w, xi = _draw_streams(noise, r, H, steps, iid_signs=(mode == "exact-mean"))
    x = np.empty((r, H, steps, n))
    u = np.empty((r, H, steps, m))
    Ex = np.empty((r, steps, n))
    Eu = np.empty((r, steps, m))
    for k, xk, uk, exk, euk in _steps(sys, g, ensemble, w, xi, mode, bound):
        x[:, :, k], u[:, :, k], Ex[:, k], Eu[:, k] = xk, uk, exk, euk
    return TrajectoryBatch(x, u, w, Ex, Eu, mode, noise.seed)


def data_matrices(batch: TrajectoryBatch) -> DataMatrices:
    """Empirical ``S^M = sum_k E[V_k V_k']`` and ``W^M = sum_k E[V_k V_{k+1}']``.

    ``V = [Ev; v - Ev]`` with ``v = [x; u]``.  Expectations are replaced by
    averages over rollouts; mean/deviation cross blocks are zeroed.
    """
    if batch.H < 2:
        raise InsufficientRollouts(f"need at least 2 rollouts per member, got {batch.H}")
    n, m, M, H = batch.n, batch.m, batch.M, batch.H
    k = n + m
    v = np.concatenate([batch.x, batch.u], axis=3)
    ev = np.concatenate([batch.Ex, batch.Eu], axis=2)
    dv = v - ev[:, None]
    cur, nxt = slice(0, M + 1), slice(1, M + 2)
    S_mean = np.einsum("lki,lkj->ij", ev[:, cur], ev[:, cur])
    W_mean = np.einsum("lki,lkj->ij", ev[:, cur], ev[:, nxt])
    S_dev = np.einsum("lhki,lhkj->ij", dv[:, :, cur], dv[:, :, cur]) / H
    W_dev = np.einsum("lhki,lhkj->ij", dv[:, :, cur], dv[:, :, nxt]) / H
    Z = np.zeros((k, k))
    SM = sym(np.block([[S_mean, Z], [Z, S_dev]]))
    WM = np.block([[W_mean, Z], [Z, W_dev]])
    if min_eig(SM) <= 0:
        raise RankDeficient(f"S^M is not positive definite (min eig {min_eig(SM):.3e}); enlarge r or M")
    return DataMatrices(SM, WM, M, H, batch.r)


@dataclass(frozen=True)
class ExactMoments:
    moments: list
    data: DataMatrices


def exact_moments(sys: MfSystem, g: GainPair, ensemble: InitialStateEnsemble, M: int) -> ExactMoments:
    """Noise-free oracle: ``S_k`` from the moment recursion and exact ``S^M``, ``W^M``."""
    if ensemble.n != sys.n:
        raise DimensionMismatch("ensemble and system dimensions disagree")
    if M < 0:
        raise InvalidHorizon(f"horizon M must be >= 0, got {M}")
    ops = augmented_ops(sys, g)
    t = ops.triple()
    S = np.asarray(ensemble.initial_moment(g), dtype=float)
    moments = [S]
    total = S.copy()
    for _ in range(M):
        S = apply_primal(t, S)
        moments.append(S)
        total += S
    total = sym(total)
    return ExactMoments(moments, DataMatrices(total, total @ ops.S1.T, M, 0, ensemble.r))


@dataclass(frozen=True)
class CostEstimate:
    value: float
    stderr: float
    tail_bound: float | None = None


def mc_cost(
    sys: MfSystem,
    w: WeightSpec,
    g: GainPair,
    ensemble: InitialStateEnsemble,
    M: int,
    H: int,
    noise: NoiseModel = NoiseModel(),
) -> CostEstimate:
    """Truncated ensemble cost by Monte Carlo, with its standard error.

    Uses exact-mean rollouts with iid initial signs; per member, the
    standard error is the across-rollout standard deviation over ``sqrt(H)``,
    combined over members in quadrature.
    """
    state_only = InitialStateEnsemble(ensemble.means, ensemble.deviations)
    _check_args(sys, g, state_only, M, H, "exact-mean")
    w_, xi = _draw_streams(noise, state_only.r, H, M + 1, iid_signs=True)
    per = np.zeros((state_only.r, H))
    for _, x, u, Ex, Eu in _steps(sys, g, state_only, w_, xi, "exact-mean", DIVERGENCE_BOUND):
        per += np.einsum("lhi,ij,lhj->lh", x, w.Q, x) + np.einsum("lhi,ij,lhj->lh", u, w.R, u)
        per += (np.einsum("li,ij,lj->l", Ex, w.Qbar, Ex) + np.einsum("li,ij,lj->l", Eu, w.Rbar, Eu))[:, None]
    value = float(per.mean(axis=1).sum())
    se = float(np.sqrt(np.sum(per.var(axis=1, ddof=1) / H))) if H > 1 else float("nan")
    # second moments decay like radius^k, so the dropped tail is about value * radius^(M+1) / (1 - radius)
    _, radius = is_stabilizing(sys, g)
    tail = value * radius ** (M + 1) / (1.0 - radius) if radius < 1 else float("inf")
    return CostEstimate(value, se, tail)


@dataclass(frozen=True)
class DriftEstimate:
    A1: np.ndarray
    A1bar: np.ndarray
    B1: np.ndarray
    B1bar: np.ndarray
    residual_mean: float
    residual_dev: float


def _regress(X, Y, what):
    need = X.shape[1]
    if X.shape[0] < need or np.linalg.matrix_rank(X) < need:
        raise RankDeficientRegressor(
            f"{what} regressor has rank {np.linalg.matrix_rank(X)} < {need}; more distinct initial conditions needed"
        )
    theta, *_ = np.linalg.lstsq(X, Y, rcond=None)
    return theta.T, float(np.linalg.norm(X @ theta - Y))


def identify_drift(batch: TrajectoryBatch) -> DriftEstimate:
    """Least-squares drift estimate from rollouts.

    Means: ``Ex_{k+1} = A1hat Ex_k + B1hat Eu_k``.  Deviations:
    ``x_{k+1} - Ex_{k+1} = A1 (x_k - Ex_k) + B1 (u_k - Eu_k) + noise``.
    """
    n, m, M = batch.n, batch.m, batch.M
    cur, nxt = slice(0, M + 1), slice(1, M + 2)
    ev = np.concatenate([batch.Ex, batch.Eu], axis=2)
    Xm = ev[:, cur].reshape(-1, n + m)
    Ym = batch.Ex[:, nxt].reshape(-1, n)
    hat, res_m = _regress(Xm, Ym, "mean")
    dv = np.concatenate([batch.x, batch.u], axis=3) - ev[:, None]
    Xd = dv[:, :, cur].reshape(-1, n + m)
    Yd = dv[:, :, nxt, :n].reshape(-1, n)
    dev, res_d = _regress(Xd, Yd, "deviation")
    A1, B1 = dev[:, :n], dev[:, n:]
    return DriftEstimate(A1, hat[:, :n] - A1, B1, hat[:, n:] - B1, res_m, res_d)
