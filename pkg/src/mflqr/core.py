"""Domain types for the discrete-time mean-field stochastic LQR problem.

The controlled system is

    x_{k+1} = (A1 x + A1bar Ex + B1 u + B1bar Eu)
              + (A2 x + A2bar Ex + B2 u + B2bar Eu) w_k

with scalar zero-mean unit-variance noise ``w_k`` and the feedback law
``u_k = F x_k + Fbar E x_k``.  Two closed-loop representations are used:

* the 2n "moment" form acting on ``[Ex; x - Ex]`` (:func:`closed_loop_2n`),
* the (2n+2m) augmented form acting on ``[Ex; Eu; x - Ex; u - Eu]``
  (:func:`augmented_ops`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag

from .errors import DimensionMismatch, IndefiniteWeight

PSD_TOL = 1e-10


def _as_matrix(name, value, shape=None):
    arr = np.array(value, dtype=float)
    if arr.ndim == 1 and shape is not None and shape[0] == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be a 2-D matrix, got ndim={arr.ndim}")
    if shape is not None and arr.shape != tuple(shape):
        raise DimensionMismatch(f"{name} has shape {arr.shape}, expected {tuple(shape)}")
    if not np.all(np.isfinite(arr)):
        raise DimensionMismatch(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def sym(X):
    """Symmetric part ``(X + X') / 2``."""
    return 0.5 * (X + X.T)


def min_eig(X):
    return float(np.linalg.eigvalsh(sym(X)).min())


def is_psd(X, tol=PSD_TOL):
    return min_eig(X) >= -tol


@dataclass(frozen=True)
class MfSystem:
    """The eight system matrices.  Hat matrices are derived on access."""

    A1: np.ndarray
    A1bar: np.ndarray
    A2: np.ndarray
    A2bar: np.ndarray
    B1: np.ndarray
    B1bar: np.ndarray
    B2: np.ndarray
    B2bar: np.ndarray

    def __post_init__(self):
        A1 = _as_matrix("A1", self.A1)
        n = A1.shape[0]
        if A1.shape != (n, n):
            raise DimensionMismatch(f"A1 must be square, got {A1.shape}")
        B1 = _as_matrix("B1", self.B1)
        if B1.shape[0] != n:
            raise DimensionMismatch(f"B1 has {B1.shape[0]} rows, expected {n}")
        m = B1.shape[1]
        for name in ("A1", "A1bar", "A2", "A2bar"):
            object.__setattr__(self, name, _as_matrix(name, getattr(self, name), (n, n)))
        for name in ("B1", "B1bar", "B2", "B2bar"):
            object.__setattr__(self, name, _as_matrix(name, getattr(self, name), (n, m)))

    @property
    def n(self):
        return self.A1.shape[0]

    @property
    def m(self):
        return self.B1.shape[1]

    @property
    def A1hat(self):
        return self.A1 + self.A1bar

    @property
    def B1hat(self):
        return self.B1 + self.B1bar

    @property
    def A2hat(self):
        return self.A2 + self.A2bar

    @property
    def B2hat(self):
        return self.B2 + self.B2bar

    @classmethod
    def zeros(cls, n, m):
        Z, Zb = np.zeros((n, n)), np.zeros((n, m))
        return cls(Z, Z, Z, Z, Zb, Zb, Zb, Zb)

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in SYSTEM_FIELDS}

    def __add__(self, other):
        return MfSystem(*(getattr(self, k) + getattr(other, k) for k in SYSTEM_FIELDS))

    def __eq__(self, other):
        if not isinstance(other, MfSystem):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in SYSTEM_FIELDS)

    __hash__ = None


SYSTEM_FIELDS = ("A1", "A1bar", "A2", "A2bar", "B1", "B1bar", "B2", "B2bar")


@dataclass(frozen=True)
class WeightSpec:
    Q: np.ndarray
    Qbar: np.ndarray
    R: np.ndarray
    Rbar: np.ndarray

    def __post_init__(self):
        Q = _as_matrix("Q", self.Q)
        n = Q.shape[0]
        R = _as_matrix("R", self.R)
        m = R.shape[0]
        object.__setattr__(self, "Q", _as_matrix("Q", Q, (n, n)))
        object.__setattr__(self, "Qbar", _as_matrix("Qbar", self.Qbar, (n, n)))
        object.__setattr__(self, "R", _as_matrix("R", R, (m, m)))
        object.__setattr__(self, "Rbar", _as_matrix("Rbar", self.Rbar, (m, m)))
        for name in ("Q", "Qbar", "R", "Rbar"):
            M = getattr(self, name)
            if not np.allclose(M, M.T, atol=1e-12, rtol=0):
                raise DimensionMismatch(f"{name} must be symmetric")

    @property
    def n(self):
        return self.Q.shape[0]

    @property
    def m(self):
        return self.R.shape[0]

    @property
    def Qhat(self):
        return self.Q + self.Qbar

    @property
    def Rhat(self):
        return self.R + self.Rbar

    @property
    def Lam(self):
        return block_diag(self.Q, self.R)

    @property
    def Lambar(self):
        return block_diag(self.Qbar, self.Rbar)

    def augmented_weight(self):
        """``blockdiag(Lam + Lambar, Lam)``, the (2n+2m) stage-cost kernel."""
        return block_diag(self.Lam + self.Lambar, self.Lam)

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("Q", "Qbar", "R", "Rbar")}

    def __eq__(self, other):
        if not isinstance(other, WeightSpec):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in ("Q", "Qbar", "R", "Rbar"))

    __hash__ = None


@dataclass(frozen=True)
class WeightReport:
    min_eig_Q: float
    min_eig_Qhat: float
    min_eig_R: float
    min_eig_Rhat: float


def validate_weights(w: WeightSpec, sys: MfSystem | None = None) -> WeightReport:
    """Check ``Q, Q+Qbar >= 0`` and ``R, R+Rbar > 0``.

    Raises :class:`IndefiniteWeight` naming the violated condition.
    """
    if sys is not None and (w.n != sys.n or w.m != sys.m):
        raise DimensionMismatch(f"weights are ({w.n}, {w.m}) but system is ({sys.n}, {sys.m})")
    report = WeightReport(min_eig(w.Q), min_eig(w.Qhat), min_eig(w.R), min_eig(w.Rhat))
    if report.min_eig_Q < -PSD_TOL:
        raise IndefiniteWeight("Q >= 0", report.min_eig_Q)
    if report.min_eig_Qhat < -PSD_TOL:
        raise IndefiniteWeight("Q + Qbar >= 0", report.min_eig_Qhat)
    if report.min_eig_R <= 0:
        raise IndefiniteWeight("R > 0", report.min_eig_R)
    if report.min_eig_Rhat <= 0:
        raise IndefiniteWeight("R + Rbar > 0", report.min_eig_Rhat)
    return report


@dataclass(frozen=True)
class GainPair:
    F: np.ndarray
    Fbar: np.ndarray

    def __post_init__(self):
        F = _as_matrix("F", self.F)
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "Fbar", _as_matrix("Fbar", self.Fbar, F.shape))

    @property
    def Fhat(self):
        return self.F + self.Fbar

    @property
    def m(self):
        return self.F.shape[0]

    @property
    def n(self):
        return self.F.shape[1]

    @classmethod
    def zeros(cls, n, m):
        return cls(np.zeros((m, n)), np.zeros((m, n)))

    def distance(self, other):
        """``||F - F'||_F + ||Fbar - Fbar'||_F``, the stopping metric."""
        return float(np.linalg.norm(self.F - other.F) + np.linalg.norm(self.Fbar - other.Fbar))

    def to_dict(self):
        return {"F": self.F.tolist(), "Fbar": self.Fbar.tolist()}

    def __eq__(self, other):
        if not isinstance(other, GainPair):
            return NotImplemented
        return np.array_equal(self.F, other.F) and np.array_equal(self.Fbar, other.Fbar)

    __hash__ = None


def _check_gains(sys, g):
    if g.F.shape != (sys.m, sys.n):
        raise DimensionMismatch(f"gain F has shape {g.F.shape}, expected {(sys.m, sys.n)}")


@dataclass(frozen=True)
class InitialStateEnsemble:
    """r initial conditions, each split into a mean part and a centered part.

    ``means``/``deviations`` are (r, n).  The optional ``input_means`` and
    ``input_deviations`` (r, m) describe the freely chosen initial control
    and turn the ensemble into its augmented (n+m) form.

    Each member is the random vector ``mean + xi * deviation`` with
    ``xi`` a zero-mean unit-variance scalar, so its centered second moment is
    ``deviation deviation'``.
    """

    means: np.ndarray
    deviations: np.ndarray
    input_means: np.ndarray | None = None
    input_deviations: np.ndarray | None = None

    def __post_init__(self):
        mu = np.atleast_2d(np.array(self.means, dtype=float))
        dev = np.array(self.deviations, dtype=float).reshape(mu.shape)
        object.__setattr__(self, "means", _as_matrix("means", mu))
        object.__setattr__(self, "deviations", _as_matrix("deviations", dev, mu.shape))
        if (self.input_means is None) != (self.input_deviations is None):
            raise DimensionMismatch("input_means and input_deviations must be given together")
        if self.input_means is not None:
            um = np.array(self.input_means, dtype=float).reshape(self.r, -1)
            object.__setattr__(self, "input_means", _as_matrix("input_means", um))
            object.__setattr__(
                self, "input_deviations", _as_matrix("input_deviations", self.input_deviations, um.shape)
            )

    @property
    def r(self):
        return self.means.shape[0]

    @property
    def n(self):
        return self.means.shape[1]

    @property
    def has_inputs(self):
        return self.input_means is not None

    @property
    def Z1(self):
        """Sum of second moments ``sum_l E[z_l z_l']``."""
        return self.Z2 + self.deviations.T @ self.deviations

    @property
    def Z2(self):
        """Sum of mean outer products ``sum_l (E z_l)(E z_l)'``."""
        return self.means.T @ self.means

    def with_inputs(self, m, seed=0):
        """Fill the free initial control from a seeded uniform law on [-1, 1]^m."""
        rng = np.random.default_rng(seed)
        um = rng.uniform(-1.0, 1.0, size=(self.r, m))
        ud = rng.uniform(-1.0, 1.0, size=(self.r, m))
        return InitialStateEnsemble(self.means, self.deviations, um, ud)

    def augmented_vectors(self):
        """Stacked (r, 2n+2m) rows ``[E v_l; v_l - E v_l]``."""
        if not self.has_inputs:
            raise DimensionMismatch("ensemble has no initial inputs; call with_inputs() first")
        return np.hstack([self.means, self.input_means, self.deviations, self.input_deviations])

    def aleph(self):
        """Initial second-moment matrix of the augmented ensemble.

        Mean and deviation parts are uncorrelated, so the result is
        block-diagonal.
        """
        V = self.augmented_vectors()
        k = self.n + self.input_means.shape[1]
        mean, dev = V[:, :k], V[:, k:]
        return block_diag(mean.T @ mean, dev.T @ dev)

    def state_aleph(self, g: GainPair):
        """``F1 Z2 F1' + F2 (Z1 - Z2) F2'`` for a state-only ensemble."""
        F1, F2 = injection_maps(g)
        return F1 @ self.Z2 @ F1.T + F2 @ (self.Z1 - self.Z2) @ F2.T

    def initial_moment(self, g: GainPair):
        """Second moment of the augmented initial vector under gains ``g``."""
        return self.aleph() if self.has_inputs else self.state_aleph(g)

    def to_dict(self):
        d = {"means": self.means.tolist(), "deviations": self.deviations.tolist()}
        if self.has_inputs:
            d["input_means"] = self.input_means.tolist()
            d["input_deviations"] = self.input_deviations.tolist()
        return d


@dataclass(frozen=True)
class ClosedLoopOps2n:
    A1cl: np.ndarray
    A2cl: np.ndarray
    A3cl: np.ndarray

    def triple(self):
        from .lyapunov import OperatorTriple

        return OperatorTriple(self.A1cl, self.A2cl, self.A3cl)


def closed_loop_2n(sys: MfSystem, g: GainPair) -> ClosedLoopOps2n:
    """Closed-loop matrices acting on ``[Ex; x - Ex]``."""
    _check_gains(sys, g)
    n = sys.n
    Z = np.zeros((n, n))
    top = sys.A1hat + sys.B1hat @ g.Fhat
    A1cl = np.block([[top, Z], [Z, sys.A1 + sys.B1 @ g.F]])
    A2cl = np.block([[Z, Z], [Z, sys.A2 + sys.B2 @ g.F]])
    A3cl = np.block([[Z, Z], [sys.A2hat + sys.B2hat @ g.Fhat, Z]])
    return ClosedLoopOps2n(A1cl, A2cl, A3cl)


@dataclass(frozen=True)
class AugmentedOps:
    S1: np.ndarray
    S2: np.ndarray
    S3: np.ndarray
    Fmap1: np.ndarray
    Fmap2: np.ndarray

    def triple(self):
        from .lyapunov import OperatorTriple

        return OperatorTriple(self.S1, self.S2, self.S3)


def injection_maps(g: GainPair):
    """``F1 = [I; F+Fbar; 0; 0]`` and ``F2 = [0; 0; I; F]``."""
    m, n = g.F.shape
    I, Zn, Zm = np.eye(n), np.zeros((n, n)), np.zeros((m, n))
    F1 = np.vstack([I, g.Fhat, Zn, Zm])
    F2 = np.vstack([Zn, Zm, I, g.F])
    return F1, F2


def _lift(F, A, B):
    """``[I; F] [A B]`` as an (n+m) x (n+m) block."""
    AB = np.hstack([A, B])
    return np.vstack([AB, F @ AB])


def diffusion_ops(A2, A2hat, B2, B2hat, F):
    """Augmented noise matrices; they depend on the gains only through F."""
    k = A2.shape[0] + B2.shape[1]
    Z = np.zeros((k, k))
    S2 = np.block([[Z, Z], [Z, _lift(F, A2, B2)]])
    S3 = np.block([[Z, Z], [_lift(F, A2hat, B2hat), Z]])
    return S2, S3


def augmented_ops(sys: MfSystem, g: GainPair) -> AugmentedOps:
    _check_gains(sys, g)
    k = sys.n + sys.m
    Z = np.zeros((k, k))
    S1 = np.block([[_lift(g.Fhat, sys.A1hat, sys.B1hat), Z], [Z, _lift(g.F, sys.A1, sys.B1)]])
    S2, S3 = diffusion_ops(sys.A2, sys.A2hat, sys.B2, sys.B2hat, g.F)
    F1, F2 = injection_maps(g)
    return AugmentedOps(S1, S2, S3, F1, F2)


def split_blocks(X, n):
    """Return the (11, 12, 22) blocks of an (n+m) x (n+m) matrix."""
    return X[:n, :n], X[:n, n:], X[n:, n:]


__all__ = [
    "MfSystem",
    "WeightSpec",
    "WeightReport",
    "GainPair",
    "InitialStateEnsemble",
    "ClosedLoopOps2n",
    "AugmentedOps",
    "validate_weights",
    "closed_loop_2n",
    "augmented_ops",
    "diffusion_ops",
    "injection_maps",
    "split_blocks",
    "sym",
    "min_eig",
    "is_psd",
    "PSD_TOL",
]
