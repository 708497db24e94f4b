import copy
import json
from pathlib import Path

import numpy as np
import pytest

from mflqr.cli import check, main
from mflqr.config import (
    SCHEMA_VERSION,
    bundled_config_path,
    config_from_dict,
    load_bundled,
    parse_config_text,
)
from mflqr.errors import InvariantError, ParseError, SchemaError

GOLDEN = Path(__file__).parent / "golden" / "benchmark_pi.json"


def scalar_config(a=0.5, b=1.0, **run):
    z = [[0.0]]
    return {
        "schema_version": SCHEMA_VERSION,
        "system": {"A1": [[a]], "A1bar": z, "A2": [[0.1]], "A2bar": z, "B1": [[b]], "B1bar": z, "B2": z, "B2bar": z},
        "weights": {"Q": [[1.0]], "Qbar": z, "R": [[1.0]], "Rbar": z},
        "ensemble": {"means": [[1.0], [-1.0], [0.5]], "deviations": [[0.3], [-0.2], [0.4]]},
        "run": run,
    }


@pytest.fixture
def bundled_dict():
    return json.loads(bundled_config_path().read_text())


def write(tmp_path, d, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(d))
    return str(p)


def test_bundled_round_trip(bench):
    again = parse_config_text(bench.dumps())
    assert again == bench
    assert bench.system.n == 3 and bench.system.m == 2 and bench.ensemble.r == 20


def test_minimal_zero_config():
    d = scalar_config(a=0.0, b=0.0)
    cfg = config_from_dict(d)
    assert cfg.gains is None and cfg.run.algorithm == "pi"


def test_indefinite_rhat_names_condition():
    d = scalar_config()
    d["weights"]["Rbar"] = [[-2.0]]
    with pytest.raises(InvariantError, match=r"R \+ Rbar > 0"):
        config_from_dict(d)


def test_bad_json_reports_position():
    with pytest.raises(ParseError, match="line 1, column"):
        parse_config_text("{not json")


@pytest.mark.parametrize(
    "mutate, pattern",
    [
        (lambda d: d.pop("system"), "missing field system"),
        (lambda d: d["system"].pop("B2"), "system.B2"),
        (lambda d: d.update(schema_version=99), "schema_version"),
        (lambda d: d["weights"].update(Q=[[1.0, 2.0], [3.0]]), "unequal"),
        (lambda d: d["weights"].update(Q=[["x"]]), "non-numeric"),
        (lambda d: d["run"].update(algorithm="sdp"), "run.algorithm"),
        (lambda d: d["run"].update(bogus=1), "unknown"),
        (lambda d: d["run"].update(M=1.5), "run.M"),
    ],
)
def test_schema_errors(mutate, pattern):
    d = scalar_config()
    mutate(d)
    with pytest.raises(SchemaError, match=pattern):
        config_from_dict(d)


def test_dimension_mismatch_is_invariant_error():
    d = scalar_config()
    d["ensemble"]["means"] = [[1.0, 2.0]]
    d["ensemble"]["deviations"] = [[0.0, 1.0]]
    with pytest.raises(InvariantError):
        config_from_dict(d)


def test_exit_codes_for_input_errors(tmp_path, bundled_dict):
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path), "--quiet"]) == 1
    d = scalar_config()
    d["weights"]["R"] = [[0.0]]
    assert main(["run", "--config", write(tmp_path, d), "--out", str(tmp_path), "--quiet"]) == 2
    assert main(["run", "--config", str(bundled_config_path()), "--out", str(tmp_path), "--seed", "-1", "--quiet"]) == 2


def test_run_pi_matches_golden(tmp_path):
    assert main(["run", "--config", str(bundled_config_path()), "--out", str(tmp_path), "--quiet"]) == 0
    res = json.loads((tmp_path / "result.json").read_text())
    gold = json.loads(GOLDEN.read_text())
    assert res["iterations"] == gold["iterations"] == 7
    assert np.allclose(res["F"], gold["F"], atol=1e-10)
    assert np.allclose(res["Fbar"], gold["Fbar"], atol=1e-10)
    assert res["optimal_cost"] == pytest.approx(gold["optimal_cost"], rel=1e-9)
    header = (tmp_path / "trace.csv").read_text().splitlines()[0]
    assert header.startswith("iter,gain_change,radius,F_11")
    assert (tmp_path / "summary.txt").read_text().startswith("algorithm: pi")


def test_run_pd_reports_sign_and_gap(tmp_path):
    assert main(["run", "--config", str(bundled_config_path()), "--algorithm", "pd", "--out", str(tmp_path), "--quiet"]) == 0
    res = json.loads((tmp_path / "result.json").read_text())
    assert res["primal_update_sign"] == -1
    assert abs(res["duality_gap"]) <= 1e-8 * res["primal_value"]
    gold = json.loads(GOLDEN.read_text())
    assert np.allclose(res["F"], gold["F"], atol=1e-9)


def test_run_pdmf_is_deterministic(tmp_path, bundled_dict):
    bundled_dict["run"].update(algorithm="pdmf", learn_iters=3, M=40, H=10)
    cfg = write(tmp_path, bundled_dict)
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert main(["run", "--config", cfg, "--out", str(out), "--seed", "7", "--quiet"]) == 0
    a, b = ((o / "trace.csv").read_bytes() for o in outs)
    assert a == b
    res = json.loads((outs[0] / "result.json").read_text())
    assert res["max_iter_reached"] and res["seed"] == 7
    assert (outs[0] / "trace.csv").read_text().startswith("iter,gain_err_F,gain_err_Fbar,kkt33_residual")


def test_compare_writes_table(tmp_path, bundled_dict):
    bundled_dict["run"].update(learn_iters=3, repeats=2, M=40, H=10)
    assert main(["compare", "--config", write(tmp_path, bundled_dict), "--out", str(tmp_path), "--quiet"]) == 0
    lines = (tmp_path / "compare.csv").read_text().splitlines()
    assert lines[0] == "seed,learned_hat_err,ident_hat_err,ratio,baseline_solver"
    assert len(lines) == 3 and all(l.endswith("policy-iteration") for l in lines[1:])


def test_compare_without_enough_data_fails(tmp_path, bundled_dict):
    bundled_dict["run"].update(learn_iters=1, repeats=1, M=0, H=2)
    bundled_dict["ensemble"]["means"] = bundled_dict["ensemble"]["means"][:2]
    bundled_dict["ensemble"]["deviations"] = bundled_dict["ensemble"]["deviations"][:2]
    assert main(["compare", "--config", write(tmp_path, bundled_dict), "--out", str(tmp_path), "--quiet"]) == 4


def test_unstable_scalar_exit_3(tmp_path):
    d = scalar_config(a=2.0, b=0.0)
    assert main(["run", "--config", write(tmp_path, d), "--out", str(tmp_path), "--quiet"]) == 3
    d = scalar_config(a=2.0)
    d["gains"] = {"F0": [[0.0]], "F0bar": [[0.0]]}
    assert main(["run", "--config", write(tmp_path, d), "--out", str(tmp_path), "--quiet"]) == 3


def test_max_iter_exit_6(tmp_path):
    d = scalar_config(eps=0.0, max_iter=1)
    d["gains"] = {"F0": [[0.0]], "F0bar": [[0.0]]}
    assert main(["run", "--config", write(tmp_path, d), "--out", str(tmp_path), "--quiet"]) == 6
    assert len((tmp_path / "trace.csv").read_text().splitlines()) == 2


def test_check_on_paper(bench):
    rep = check(bench)
    assert rep["all_ok"]
    assert rep["aleph"]["r"] == 20 and rep["aleph"]["required_r"] == 10


def test_check_flags_degenerate_ensemble(bundled_dict):
    d = copy.deepcopy(bundled_dict)
    d["ensemble"]["means"] = [[1.0, 0.0, 0.0]] * 9
    d["ensemble"]["deviations"] = [[0.0, 0.0, 0.0]] * 9
    rep = check(config_from_dict(d))
    assert not rep["ensemble"]["ok"] and not rep["aleph"]["ok"]
    assert rep["aleph"]["r"] == 9 < rep["aleph"]["required_r"]
    assert not rep["all_ok"]


def test_check_command_writes_report(tmp_path):
    assert main(["check", "--config", str(bundled_config_path()), "--out", str(tmp_path), "--quiet"]) == 0
    assert json.loads((tmp_path / "check.json").read_text())["all_ok"]


def test_load_bundled_equals_fixture(bench):
    assert load_bundled() == bench
