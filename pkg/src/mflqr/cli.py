"""Command-line front end: ``mflqr <run|compare|check> --config FILE``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, parse_config
from .core import MfSystem, min_eig, validate_weights
from .errors import IndefiniteWeight, InvariantError, MaxIterExceeded, MfLqrError, NotStabilizing
from .lyapunov import is_stabilizing
from .model_free import PartialModel, SampledData, hat_error, run_pdmf
from .primal_dual import PRIMAL_UPDATE_SIGN, run_pd, solve_optimum
from .riccati import find_stabilizing_gains, gare_residual_norm, optimal_cost, run_pi
from .simulator import NoiseModel, identify_drift, rollout

BASELINE_SOLVER = "policy-iteration"


def _fmt(v):
    return f"{float(v):.17g}"


def _gain_columns(n, m):
    cols = [f"F_{i + 1}{j + 1}" for i in range(m) for j in range(n)]
    return cols + [f"Fbar_{i + 1}{j + 1}" for i in range(m) for j in range(n)]


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def _write_gain_trace(path, trace, n, m):
    rows = []
    for rec in trace.records:
        rows.append([rec.i, float(rec.gain_change), float(rec.radius), *map(float, rec.F.ravel()),
                     *map(float, rec.Fbar.ravel())])
    _write_csv(path, ["iter", "gain_change", "radius", *_gain_columns(n, m)], rows)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _start_gains(cfg: ExperimentConfig):
    if cfg.gains is not None:
        return cfg.gains
    return find_stabilizing_gains(cfg.system, seed=cfg.run.seed)


def _reference(cfg):
    return run_pi(cfg.system, cfg.weights, _start_gains(cfg), cfg.run.eps, cfg.run.max_iter).gains


def _run_pi(cfg, out):
    sys_, w, rs = cfg.system, cfg.weights, cfg.run
    try:
        trace = run_pi(sys_, w, _start_gains(cfg), rs.eps, rs.max_iter)
    except MaxIterExceeded as exc:
        _write_gain_trace(out / "trace.csv", exc.trace, sys_.n, sys_.m)
        raise
    _write_gain_trace(out / "trace.csv", trace, sys_.n, sys_.m)
    v, g = trace.values, trace.gains
    result = {
        "algorithm": "pi",
        "converged": trace.converged,
        "iterations": trace.iterations,
        "F": g.F.tolist(),
        "Fbar": g.Fbar.tolist(),
        "Fhat": g.Fhat.tolist(),
        "P": v.P.tolist(),
        "Pbar": v.Pbar.tolist(),
        "optimal_cost": optimal_cost(v, cfg.ensemble.Z1, cfg.ensemble.Z2),
        "gare_residual": gare_residual_norm(sys_, w, v),
        "elapsed_s": trace.elapsed,
    }
    return result


def _run_pd(cfg, out):
    sys_, w, rs = cfg.system, cfg.weights, cfg.run
    g0 = _start_gains(cfg)
    try:
        trace = run_pd(sys_, w, g0, rs.eps, rs.max_iter)
    except MaxIterExceeded as exc:
        _write_gain_trace(out / "trace.csv", exc.trace, sys_.n, sys_.m)
        raise
    _write_gain_trace(out / "trace.csv", trace, sys_.n, sys_.m)
    ens = cfg.augmented_ensemble()
    sol = solve_optimum(sys_, w, trace.final_gains, ens.aleph(), rs.eps, rs.max_iter)
    g = trace.final_gains
    return {
        "algorithm": "pd",
        "converged": trace.converged,
        "iterations": trace.iterations,
        "F": g.F.tolist(),
        "Fbar": g.Fbar.tolist(),
        "Fhat": g.Fhat.tolist(),
        "primal_value": sol.primal_value,
        "dual_value": sol.dual_value,
        "duality_gap": sol.gap,
        "primal_update_sign": PRIMAL_UPDATE_SIGN,
        "sign_convention": trace.sign_convention,
        "elapsed_s": trace.elapsed,
    }


def _learn(cfg, seed, ref):
    rs = cfg.run
    source = SampledData(cfg.system, cfg.augmented_ensemble(), rs.M, rs.H, NoiseModel(rs.noise, seed))
    pm = PartialModel.from_system(cfg.system, cfg.weights)
    return run_pdmf(pm, source, _start_gains(cfg), rs.eps, rs.learn_iters, reference=ref)


def _run_pdmf(cfg, out):
    ref = _reference(cfg)
    trace = _learn(cfg, cfg.run.seed, ref)
    trace.to_csv(out / "trace.csv")
    g = trace.final_gains
    return {
        "algorithm": "pdmf",
        "converged": trace.converged,
        "max_iter_reached": trace.max_iter_reached,
        "iterations": trace.iterations,
        "seed": cfg.run.seed,
        "F": g.F.tolist(),
        "Fbar": g.Fbar.tolist(),
        "Fhat": g.Fhat.tolist(),
        "hat_gain_error": hat_error(g, ref),
        "repaired_iterations": sum(r.repaired for r in trace.records),
        "elapsed_s": trace.elapsed,
    }


def identification_baseline(cfg: ExperimentConfig, seed):
    """One batch at the starting gains, least-squares drift, PI on the estimate."""
    rs = cfg.run
    g0 = _start_gains(cfg)
    batch = rollout(cfg.system, g0, cfg.augmented_ensemble(), rs.M, rs.H, NoiseModel(rs.noise, seed))
    est = identify_drift(batch)
    s = cfg.system
    model = MfSystem(est.A1, est.A1bar, s.A2, s.A2bar, est.B1, est.B1bar, s.B2, s.B2bar)
    start = g0 if is_stabilizing(model, g0)[0] else find_stabilizing_gains(model, seed=seed)
    return run_pi(model, cfg.weights, start, rs.eps, rs.max_iter).gains


def compare(cfg: ExperimentConfig):
    """Per-seed hat-gain errors of the learner and the identification baseline."""
    ref = _reference(cfg)
    rows = []
    for rep in range(cfg.run.repeats):
        seed = cfg.run.seed + rep
        learned = hat_error(_learn(cfg, seed, ref).final_gains, ref)
        ident = hat_error(identification_baseline(cfg, seed), ref)
        rows.append((seed, learned, ident))
    return rows


def _run_compare(cfg, out):
    rows = compare(cfg)
    learned = float(np.median([r[1] for r in rows]))
    ident = float(np.median([r[2] for r in rows]))
    _write_csv(
        out / "compare.csv",
        ["seed", "learned_hat_err", "ident_hat_err", "ratio", "baseline_solver"],
        [[s, float(a), float(b), float(a / b), BASELINE_SOLVER] for s, a, b in rows],
    )
    return {
        "algorithm": "compare",
        "median_learned_hat_err": learned,
        "median_ident_hat_err": ident,
        "ratio": learned / ident,
        "learned_better": learned < ident,
        "baseline_solver": BASELINE_SOLVER,
        "per_seed": [{"seed": s, "learned": a, "ident": b} for s, a, b in rows],
    }


def check(cfg: ExperimentConfig):
    """Assumption report; never raises on a failed check."""
    rep = {}
    try:
        wr = validate_weights(cfg.weights, cfg.system)
        rep["weights"] = {"ok": True, **wr.__dict__}
    except IndefiniteWeight as exc:
        rep["weights"] = {"ok": False, "condition": exc.condition, "eigenvalue": exc.eigenvalue}
    if cfg.gains is not None:
        ok, radius = is_stabilizing(cfg.system, cfg.gains)
        rep["stabilizing"] = {"ok": ok, "source": "config", "radius": radius}
    else:
        try:
            g = find_stabilizing_gains(cfg.system, seed=cfg.run.seed)
            rep["stabilizing"] = {"ok": True, "source": "search", "radius": is_stabilizing(cfg.system, g)[1]}
        except NotStabilizing as exc:
            rep["stabilizing"] = {"ok": False, "source": "search", "radius": exc.radius}
    e = cfg.ensemble
    z2 = min_eig(e.Z2)
    z12 = min_eig(e.Z1 - e.Z2)
    rep["ensemble"] = {"ok": z2 > 0 and z12 > 0, "min_eig_Z2": z2, "min_eig_Z1_minus_Z2": z12}
    aug = cfg.augmented_ensemble()
    k = cfg.system.n + cfg.system.m
    rep["aleph"] = {
        "ok": min_eig(aug.aleph()) > 0 and aug.r >= 2 * k,
        "min_eig": min_eig(aug.aleph()),
        "r": aug.r,
        "required_r": 2 * k,
    }
    rep["all_ok"] = all(v["ok"] for v in rep.values() if isinstance(v, dict))
    return rep


def _summary(result):
    lines = []
    for key in sorted(result):
        val = result[key]
        if isinstance(val, float):
            lines.append(f"{key}: {val:.6g}")
        elif isinstance(val, (bool, int, str)):
            lines.append(f"{key}: {val}")
        elif isinstance(val, dict) and "ok" in val:
            lines.append(f"{key}: {'ok' if val['ok'] else 'FAILED'}")
    return "\n".join(lines) + "\n"


RUNNERS = {"pi": _run_pi, "pd": _run_pd, "pdmf": _run_pdmf, "compare": _run_compare}


def build_parser():
    p = argparse.ArgumentParser(prog="mflqr", description="Mean-field stochastic LQR experiments.")
    p.add_argument("command", choices=("run", "compare", "check"))
    p.add_argument("--config", required=True, help="experiment JSON file")
    p.add_argument("--out", help="output directory (default: config 'output' or '.')")
    p.add_argument("--seed", type=int, help="override run.seed")
    p.add_argument("--algorithm", choices=tuple(RUNNERS), help="override run.algorithm for 'run'")
    p.add_argument("--quiet", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            if args.seed < 0 or args.seed >= 2**64:
                raise InvariantError("seed must fit in an unsigned 64-bit integer")
            cfg = cfg.with_seed(args.seed)
        out = Path(args.out or cfg.output or ".")
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "check":
            result = check(cfg)
            _write_json(out / "check.json", result)
        else:
            algo = "compare" if args.command == "compare" else (args.algorithm or cfg.run.algorithm)
            result = RUNNERS[algo](cfg, out)
            _write_json(out / "result.json", result)
        summary = _summary(result)
        (out / "summary.txt").write_text(summary)
        if not args.quiet:
            sys.stdout.write(summary)
    except MfLqrError as exc:
        print(f"mflqr: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
