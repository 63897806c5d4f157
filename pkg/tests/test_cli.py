import csv
import json
import math

import pytest

from drifteig.cli import (EXIT_CONFIG, EXIT_FAIL, EXIT_OK, EXIT_TOPOLOGY, SWEEP_HEADER, RunConfig,
                          ConfigError, main, phase_svg, read_sweep_csv, verdicts)
from drifteig.geometry import Disk

FLAT = {"field": {"b1": "0", "b2": "0"}, "c": "2.5", "A": [1, 2, 4, 8], "n": 33,
        "degenerate": [{"region": {"type": "disk", "center": [0, 0], "radius": 1.0}, "case": "N"}]}


def run(tmp_path, cfg, command, *extra, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    out = tmp_path / ("out_" + command + "_" + name.split(".")[0])
    return main([command, "--config", str(path), "--out", str(out), *extra]), out


@pytest.mark.parametrize("patch", [
    {"A": [2, 1]},
    {"A": [0, 1]},
    {"A": []},
    {"n": 8},
    {"scheme": "upwind3"},
    {"c": "x1 +"},
    {"field": {"b1": "x3", "b2": "0"}},
    {"domain": {"type": "ellipse"}},
    {"bogus": 1},
    {"bc": "robin"},
])
def test_bad_config_exit_code(tmp_path, patch):
    code, _ = run(tmp_path, {**FLAT, **patch}, "sweep")
    assert code == EXIT_CONFIG


def test_missing_config_file(tmp_path):
    assert main(["sweep", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG


def test_flat_drift_sweep(tmp_path):
    code, out = run(tmp_path, FLAT, "degenerate")
    assert code == EXIT_OK
    with open(out / "sweep.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == SWEEP_HEADER
    assert [float(r[0]) for r in rows[1:]] == [1.0, 2.0, 4.0, 8.0]
    for r in rows[1:]:
        assert float(r[1]) == pytest.approx(2.5, abs=1e-8)
    report = json.loads((out / "report.json").read_text())
    assert report["verdicts"]["pass"] is True
    assert report["predicted"]["value"] == pytest.approx(2.5)


def test_sweep_with_override_and_determinism(tmp_path):
    cfg = {k: v for k, v in FLAT.items() if k != "degenerate"}
    cfg["predicted"] = 2.5
    c1, o1 = run(tmp_path, cfg, "sweep", name="a.json")
    c2, o2 = run(tmp_path, cfg, "sweep", name="b.json")
    assert c1 == c2 == EXIT_OK
    for f in ("sweep.csv", "report.json", "components.json"):
        assert (o1 / f).read_bytes() == (o2 / f).read_bytes()


def test_parallel_sweep_matches_serial(tmp_path):
    cfg = {"field": {"builtin": "rotation"}, "c": "x1^2", "A": [1, 2, 4], "n": 33,
           "predicted": 0.25}
    c1, o1 = run(tmp_path, cfg, "sweep", name="s.json")
    c2, o2 = run(tmp_path, cfg, "sweep", "--jobs", "2", name="p.json")
    assert c1 == c2
    assert (o1 / "sweep.csv").read_bytes() == (o2 / "sweep.csv").read_bytes()


def test_reduce_rotation(tmp_path):
    cfg = {"field": {"builtin": "rotation"}, "c": "x1^2", "A": [1], "n": 65, "stations": 64}
    code, out = run(tmp_path, cfg, "reduce")
    assert code == EXIT_OK
    with open(out / "weights.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["ell", "kappa", "mu", "gamma"]
    rep = json.loads((out / "reduce.json").read_text())
    assert rep["direct_2d"]["agree"] is True
    assert rep["reduced"]["value"] == pytest.approx(0.2487, abs=2e-3)


def test_reduce_without_family_is_topology_error(tmp_path):
    cfg = {"field": {"b1": "-x1", "b2": "-x2"}, "c": "1", "A": [1], "n": 33}
    code, _ = run(tmp_path, cfg, "reduce")
    assert code == EXIT_TOPOLOGY


def test_heteroclinic_analyze_exit(tmp_path):
    cfg = {"field": {"b1": "x2", "b2": "-sin(x1)"}, "c": "1", "A": [1], "n": 33,
           "domain": {"type": "rect", "lo": [-4, -3], "hi": [4, 3]}}
    code, _ = run(tmp_path, cfg, "analyze")
    assert code == EXIT_TOPOLOGY


def test_analyze_writes_portrait(tmp_path):
    cfg = {"field": {"builtin": "corollary", "alpha": -0.25}, "c": "x1 + x2^2 + 2", "A": [1],
           "n": 33}
    code, out = run(tmp_path, cfg, "analyze")
    assert code == EXIT_OK
    comp = json.loads((out / "components.json").read_text())
    assert comp["predicted"]["value"] == pytest.approx(1.0, abs=1e-9)
    svg = (out / "phase.svg").read_text()
    assert 'width="800"' in svg and 'height="800"' in svg


def test_report_recomputes_with_new_tolerance(tmp_path):
    cfg = {k: v for k, v in FLAT.items() if k != "degenerate"}
    cfg["predicted"] = 2.45
    code, out = run(tmp_path, cfg, "sweep")
    assert code == EXIT_OK  # gap 0.05 within the default tolerance
    path = tmp_path / "cfg.json"
    assert main(["report", "--config", str(path), "--out", str(out), "--tol", "0.01"]) == EXIT_FAIL
    rep = json.loads((out / "report.json").read_text())
    assert rep["verdicts"]["final_gap_within_tol"] is False
    assert len(read_sweep_csv(out / "sweep.csv")) == 4


def test_verdict_rules():
    rows = [{"A": a, "lambda": 1 + g, "gap": g, "residual": 0.0, "iters": 1}
            for a, g in [(1, 0.5), (2, 0.3), (4, 0.2), (8, 0.05)]]
    v = verdicts(rows, 0.1)
    assert v["pass"] and v["gaps_nonincreasing_last_half"]
    rows[-1]["gap"] = 0.25
    assert not verdicts(rows, 0.3)["gaps_nonincreasing_last_half"]
    rows[-1]["gap"] = math.nan
    rows[-1]["error"] = "StagnationError"
    v = verdicts(rows, 0.3)
    assert v["failed_rows"] == 1 and not v["pass"]


def test_config_defaults():
    cfg = RunConfig.from_dict({"field": {"builtin": "corollary", "alpha": 0}, "c": "1", "A": [1]})
    assert cfg.domain["type"] == "sublevel" and cfg.n == 257
    cfg = RunConfig.from_dict({"field": {"builtin": "rotation"}, "c": "1", "A": [1]})
    assert cfg.domain["type"] == "disk"
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"field": {"builtin": "corollary"}, "c": "1", "A": [1]}).build_field()


def test_svg_size_and_empty():
    s = phase_svg(Disk((0, 0), 1), [])
    assert s.startswith("<svg") and 'viewBox="0 0 800 800"' in s
