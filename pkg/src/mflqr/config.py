"""Experiment configuration files (JSON, versioned schema)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .core import SYSTEM_FIELDS, GainPair, InitialStateEnsemble, MfSystem, WeightSpec, validate_weights
from .errors import DimensionMismatch, IndefiniteWeight, InvariantError, ParseError, SchemaError

SCHEMA_VERSION = 1
ALGORITHMS = ("pi", "pd", "pdmf", "compare")
NOISE_KINDS = ("normal", "rademacher")


@dataclass(frozen=True)
class RunSettings:
    algorithm: str = "pi"
    eps: float = 1e-10
    max_iter: int = 500
    M: int = 100
    H: int = 30
    seed: int = 0
    noise: str = "normal"
    learn_iters: int = 30
    repeats: int = 3
    u_psi_seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    system: MfSystem
    weights: WeightSpec
    ensemble: InitialStateEnsemble
    gains: GainPair | None = None
    run: RunSettings = field(default_factory=RunSettings)
    output: str | None = None

    def augmented_ensemble(self):
        if self.ensemble.has_inputs:
            return self.ensemble
        return self.ensemble.with_inputs(self.system.m, seed=self.run.u_psi_seed)

    def to_dict(self):
        d = {
            "schema_version": SCHEMA_VERSION,
            "system": self.system.to_dict(),
            "weights": self.weights.to_dict(),
            "ensemble": {"means": self.ensemble.means.tolist(), "deviations": self.ensemble.deviations.tolist()},
            "run": dict(self.run.__dict__),
        }
        if self.ensemble.has_inputs:
            d["ensemble"]["u_psi"] = {
                "means": self.ensemble.input_means.tolist(),
                "deviations": self.ensemble.input_deviations.tolist(),
            }
        if self.gains is not None:
            d["gains"] = {"F0": self.gains.F.tolist(), "F0bar": self.gains.Fbar.tolist()}
        if self.output is not None:
            d["output"] = self.output
        return d

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2)

    def with_seed(self, seed):
        return replace(self, run=replace(self.run, seed=int(seed)))

    def __eq__(self, other):
        if not isinstance(other, ExperimentConfig):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None


def _require(obj, key, where, kind=dict):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaError(f"missing field {where}.{key}" if where else f"missing field {key}")
    val = obj[key]
    if kind is not None and not isinstance(val, kind):
        raise SchemaError(f"field {where}.{key} must be a {kind.__name__}")
    return val


def _matrix(obj, key, where):
    path = f"{where}.{key}"
    val = _require(obj, key, where, list)
    if not val or not all(isinstance(row, list) for row in val):
        raise SchemaError(f"field {path} must be an array of row arrays")
    width = len(val[0])
    if any(len(row) != width for row in val):
        raise SchemaError(f"field {path} has rows of unequal length")
    try:
        arr = np.array(val, dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"field {path} has non-numeric entries") from exc
    if not np.all(np.isfinite(arr)):
        raise SchemaError(f"field {path} has non-finite entries")
    return arr


def _run_settings(d):
    if d is None:
        return RunSettings()
    if not isinstance(d, dict):
        raise SchemaError("field run must be an object")
    known = RunSettings.__dataclass_fields__
    unknown = set(d) - set(known)
    if unknown:
        raise SchemaError(f"unknown field(s) in run: {sorted(unknown)}")
    kwargs = {}
    for key, val in d.items():
        expected = known[key].type
        if expected == "str":
            if not isinstance(val, str):
                raise SchemaError(f"field run.{key} must be a string")
        elif expected == "int":
            if isinstance(val, bool) or not isinstance(val, int):
                raise SchemaError(f"field run.{key} must be an integer")
        elif isinstance(val, bool) or not isinstance(val, (int, float)):
            raise SchemaError(f"field run.{key} must be a number")
        kwargs[key] = val
    rs = RunSettings(**kwargs)
    if rs.algorithm not in ALGORITHMS:
        raise SchemaError(f"field run.algorithm must be one of {ALGORITHMS}, got {rs.algorithm!r}")
    if rs.noise not in NOISE_KINDS:
        raise SchemaError(f"field run.noise must be one of {NOISE_KINDS}, got {rs.noise!r}")
    for key in ("max_iter", "H", "learn_iters", "repeats"):
        if getattr(rs, key) < 1:
            raise InvariantError(f"field run.{key} must be positive")
    if rs.M < 0 or rs.eps < 0 or rs.seed < 0:
        raise InvariantError("fields run.M, run.eps and run.seed must be non-negative")
    return rs


def config_from_dict(d) -> ExperimentConfig:
    if not isinstance(d, dict):
        raise SchemaError("top level must be an object")
    version = _require(d, "schema_version", "", int)
    if version != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {version} (expected {SCHEMA_VERSION})")
    s = _require(d, "system", "")
    mats = {k: _matrix(s, k, "system") for k in SYSTEM_FIELDS}
    wd = _require(d, "weights", "")
    wm = {k: _matrix(wd, k, "weights") for k in ("Q", "Qbar", "R", "Rbar")}
    ed = _require(d, "ensemble", "")
    means, devs = _matrix(ed, "means", "ensemble"), _matrix(ed, "deviations", "ensemble")
    um = ud = None
    if "u_psi" in ed:
        um = _matrix(ed["u_psi"], "means", "ensemble.u_psi")
        ud = _matrix(ed["u_psi"], "deviations", "ensemble.u_psi")
    try:
        system = MfSystem(**mats)
        weights = WeightSpec(**wm)
        validate_weights(weights, system)
        ensemble = InitialStateEnsemble(means, devs, um, ud)
        if ensemble.n != system.n:
            raise DimensionMismatch(f"ensemble states have dimension {ensemble.n}, system has {system.n}")
        if um is not None and um.shape[1] != system.m:
            raise DimensionMismatch(f"ensemble.u_psi has dimension {um.shape[1]}, system has {system.m}")
        gains = None
        if "gains" in d:
            gd = d["gains"]
            gains = GainPair(_matrix(gd, "F0", "gains"), _matrix(gd, "F0bar", "gains"))
            if gains.F.shape != (system.m, system.n):
                raise DimensionMismatch(f"gains.F0 has shape {gains.F.shape}, expected {(system.m, system.n)}")
    except IndefiniteWeight as exc:
        raise InvariantError(str(exc)) from exc
    except (DimensionMismatch, ValueError) as exc:
        raise InvariantError(str(exc)) from exc
    output = d.get("output")
    if output is not None and not isinstance(output, str):
        raise SchemaError("field output must be a string")
    return ExperimentConfig(system, weights, ensemble, gains, _run_settings(d.get("run")), output)


def parse_config_text(text) -> ExperimentConfig:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return config_from_dict(d)


def parse_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    return parse_config_text(text)


def bundled_config_path(name="paper_sec5.json"):
    return resources.files("mflqr") / "data" / name


def load_bundled(name="paper_sec5.json") -> ExperimentConfig:
    return parse_config_text(bundled_config_path(name).read_text())
