import io
import json
import math

import pytest
from hypothesis import given, strategies as st

from ctrlmac_cosim import ScenarioError, compute_metrics, emit_csv, parse_scenario, run_scenario
from ctrlmac_cosim.cli import main
from ctrlmac_cosim.cosim import EventRecord, SimLog
from ctrlmac_cosim.metrics import MetricsReport, exponential_ks
from ctrlmac_cosim.scenario import DmaSpec, ScenarioSpec, TrafficSpec


def test_minimal_config_defaults():
    spec = parse_scenario('{"protocol": "ctrlmac", "duration": 100, "seed": 1}')
    assert len(spec.dmas) == 1
    d = spec.dmas[0]
    assert (d.n_tanks, d.h, d.sigma, d.rho, d.tau_d) == (3, 4.5, 0.1, 0.001, 0.0)
    assert not spec.capture.enabled


def test_error_paths():
    with pytest.raises(ScenarioError, match=r"\$\.dmas\[0\]\.sigma"):
        parse_scenario('{"protocol": "ctrlmac", "duration": 10, "seed": 1, "dmas": [{"sigma": 1.2}]}')
    with pytest.raises(ScenarioError, match="tau_d"):
        parse_scenario('{"protocol": "ctrlmac", "duration": 10, "seed": 1, '
                       '"dmas": [{"h": 1.0, "tau_d": 1.0}]}')
    with pytest.raises(ScenarioError, match="protocol"):
        parse_scenario('{"protocol": "zigbee", "duration": 10, "seed": 1}')
    with pytest.raises(ScenarioError, match="JSON"):
        parse_scenario("{nope")


def test_empty_report_is_header_only():
    spec = ScenarioSpec("ctrlmac", 10.0, 1, traffic=TrafficSpec(1, interval=1e6))
    log = SimLog(spec)
    rep = compute_metrics(log)
    assert rep.empty and rep.n_events == 0 and rep.e2e_pdr == 0.0
    text = emit_csv([])
    assert text.count("\n") == 1


def test_report_fields():
    log = SimLog(ScenarioSpec("ctrlmac", 60.0, 1, traffic=TrafficSpec(2)))
    log.events = [
        EventRecord(0, "n0", 1.0, received_at=2.0, acked=True, delivered_at=3.0, fate="delivered"),
        EventRecord(1, "n1", 2.0, received_at=3.0, acked=False, delivered_at=7.0, fate="delivered"),
        EventRecord(2, "n0", 4.0, fate="dropped"),
        EventRecord(3, "n1", 5.0, fate="superseded"),
    ]
    log.peak_excess = {"all": [-0.01, 0.02]}
    rep = compute_metrics(log)
    assert rep.e2e_pdr == 50.0 and rep.drops == 1
    assert rep.e2e_delay_mean == pytest.approx(3.5) and rep.e2e_delay_max == pytest.approx(5.0)
    assert rep.ul_reliability == 50.0 and not rep.ul_reliability_over_100
    assert rep.events_per_minute["all"] == pytest.approx(4.0)
    assert rep.overshoot_pct["all"] == pytest.approx(2.0)
    assert rep.per_node_rtt == {"n0": 2.0, "n1": 5.0}


def test_critical_flag():
    assert MetricsReport(overshoot_pct={"all": 60.0}).critical
    assert not MetricsReport(overshoot_pct={"all": 10.0}).critical


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=5))
def test_csv_roundtrip_is_deterministic(vals):
    rows = [{"a": v, "b": i} for i, v in enumerate(vals)]
    assert emit_csv(rows) == emit_csv(rows)
    lines = emit_csv(rows).splitlines()
    assert lines[0] == "a,b" and len(lines) == len(vals) + 1
    for line, v in zip(lines[1:], vals):
        assert float(line.split(",")[0]) == pytest.approx(v, rel=1e-5, abs=1e-300)


def test_csv_refuses_nan():
    with pytest.raises(ValueError):
        emit_csv([{"a": math.nan}])
    buf = io.StringIO()
    emit_csv([{"a": None, "b": True}], buf)
    assert buf.getvalue() == "a,b\n,1\n"


def test_ks_rejects_constant_gaps():
    import numpy as np
    _, p = exponential_ks(np.full(500, 2.0))
    assert p < 1e-6
    _, p = exponential_ks(np.random.default_rng(0).exponential(3.0, 2000))
    assert p > 0.01


def _short(proto, seed=3, **kw):
    return ScenarioSpec(proto, 600.0, seed, dmas=(DmaSpec(), DmaSpec(n_tanks=4)), **kw)


def test_wired_is_lossless_and_instant():
    rep = compute_metrics(run_scenario(_short("wired")))
    assert rep.e2e_pdr == 100.0 and rep.e2e_delay_max == 0.0 and rep.drops == 0


def test_replay_is_identical():
    a = emit_csv([compute_metrics(run_scenario(_short("ctrlmac"))).as_row()])
    b = emit_csv([compute_metrics(run_scenario(_short("ctrlmac"))).as_row()])
    assert a == b


def test_delivered_updates_are_fresh():
    log = run_scenario(_short("ctrlmac"))
    for e in log.events:
        if e.fate == "delivered":
            assert e.generated_at <= e.received_at <= e.delivered_at


def test_cli_simulate_and_exit_codes(tmp_path, capsys):
    cfg = tmp_path / "s.json"
    cfg.write_text(json.dumps({"protocol": "wired", "duration": 200, "seed": 2}))
    assert main(["simulate", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("system,seed,") and "wired" in out
    assert main(["simulate", str(cfg), "--out-dir", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "scenario.csv").read_text().count("\n") == 2
    cfg.write_text(json.dumps({"protocol": "wired", "duration": 200, "seed": 2,
                               "dmas": [{"sigma": 1.2}]}))
    assert main(["simulate", str(cfg)]) == 2
    assert "sigma" in capsys.readouterr().err
    assert main(["simulate", str(tmp_path / "missing.json")]) == 1


def test_cli_analyze_queue(capsys):
    assert main(["analyze-queue", "--lambda-grid", "12,500"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 3
    assert lines[-1].endswith(",,,,,")  # saturated rows leave delay cells blank


def test_cli_stability(tmp_path, capsys):
    cfg = tmp_path / "sys.json"
    cfg.write_text(json.dumps({"A": [[1.0]], "B": [[1.0]], "K": [[-2.0]], "h": 0.1,
                               "sigma": 0.0, "rho": 0.001}))
    assert main(["stability", "--system", str(cfg), "--tau-grid", "0.02,0.05"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "system,h,sigma,tau_d,feasible"
    assert lines[1] == "system,0.1,0,0,1"
