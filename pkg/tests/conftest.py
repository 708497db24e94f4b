import numpy as np
import pytest

from mflqr.config import load_bundled
from mflqr.core import GainPair, InitialStateEnsemble, MfSystem, WeightSpec
from mflqr.lyapunov import is_stabilizing

ACCEPTANCE = []


def record(name, ok, detail):
    ACCEPTANCE.append((name, bool(ok), detail))
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


@pytest.fixture(scope="session")
def bench():
    return load_bundled()


def random_instance(rng, n=None, m=None, target=0.8, noise=True):
    """Random system for which zero gains are mean-square stabilizing."""
    n = n or int(rng.integers(1, 5))
    m = m or int(rng.integers(1, 3))
    mats = [rng.standard_normal((n, n)) for _ in range(4)] + [rng.standard_normal((n, m)) for _ in range(4)]
    if not noise:
        mats[2] = mats[3] = np.zeros((n, n))
        mats[6] = mats[7] = np.zeros((n, m))
    base = MfSystem(*mats)
    radius = is_stabilizing(base, GainPair.zeros(n, m))[1]
    c = np.sqrt(target / radius) if radius > 0 else 1.0
    sys_ = MfSystem(*(c * M for M in mats))
    Lq = rng.standard_normal((n, n))
    Lr = rng.standard_normal((m, m))
    w = WeightSpec(Lq @ Lq.T + 0.1 * np.eye(n), np.diag(rng.uniform(0, 1, n)), Lr @ Lr.T + np.eye(m),
                   np.diag(rng.uniform(0, 1, m)))
    return sys_, w


def random_ensemble(rng, n, r=None):
    r = r or 3 * n + 4
    return InitialStateEnsemble(rng.standard_normal((r, n)) * 2, rng.standard_normal((r, n)) * 2)


def near_gains(rng, sys_, g, scale=0.05, tries=50):
    for _ in range(tries):
        cand = GainPair(g.F + scale * rng.standard_normal(g.F.shape), g.Fbar + scale * rng.standard_normal(g.F.shape))
        if is_stabilizing(sys_, cand)[0]:
            return cand
    return g
