import json
from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import trapezoid

from delaysync.channel import export_delays, import_delays
from delaysync.cli import main
from delaysync.engine import (
    ScenarioError,
    SimulationDiverged,
    bundled,
    generate_delays,
    load_scenario,
    parse_scenario,
    run,
    save_scenario,
)
from delaysync.engine.metrics import metrics, spread
from delaysync.engine.scenario import InitialSpec, dump_scenario
from delaysync.engine.trace import TraceFormatError, emit_trace, load_trace, trace_text

BUNDLED = ["paper_leader", "paper_leaderless", "paper_corollary", "single_agent"]


@pytest.fixture(scope="module")
def short_leader():
    sc = replace(bundled("paper_leader"), duration=4.0)
    return sc, run(sc)


# ---------------------------------------------------------------- scenario files


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_scenarios_load(name):
    sc = bundled(name)
    assert sc.name == name
    assert load_scenario(name) == sc


@pytest.mark.parametrize("name", BUNDLED)
def test_scenario_round_trip(name, tmp_path):
    sc = bundled(name)
    path = tmp_path / "s.scn"
    save_scenario(sc, path)
    again = load_scenario(path)
    assert again == sc
    assert dump_scenario(again) == dump_scenario(sc)


def test_bundled_leader_settings():
    sc = bundled("paper_leader")
    assert sc.graph.n == 10 and sc.leaders == (1, 4)
    assert sc.h_star == 1.3 and sc.comm_params().h_star == pytest.approx(1.25)
    assert np.allclose(sc.gain_set().mu, np.sqrt(13))
    assert bundled("paper_corollary").effective_leaders == tuple(range(1, 11))


BAD = [
    ("dt: 0.003\n", "dt", "does not divide"),
    ("duration: 1.0\n", "duration", "3 h*"),
    ("leaders: [11]\n", "leaders", "not agents"),
    ("extrapolation: cubic\n", "extrapolation", "unknown variant"),
    ("gains:\n  k_e: -1\n", "k_e", "positive"),
    ("comm:\n  delay_range: [0.1, 0.4]\n", "delay_range", "delay_range"),
    ("plant:\n  kind: rocket\n", "kind", "unknown plant"),
]


@pytest.mark.parametrize("extra, key, msg", BAD)
def test_invalid_scenarios_report_line(extra, key, msg):
    base = "name: bad\nleaders: [1]\nv_d: [0.3, 0.6]\ngraph:\n  n: 2\n  edges: [[1, 2, 1.0]]\n"
    text = base + extra
    with pytest.raises(ScenarioError) as info:
        parse_scenario(text, "bad.scn")
    err = str(info.value)
    assert msg in err
    line = int(err.split(":")[1])
    assert text.splitlines()[line - 1].lstrip().startswith(key)


def test_unknown_key_and_syntax_errors():
    with pytest.raises(ScenarioError, match=r"bad.scn:\d+: expected"):
        parse_scenario("graph: [unclosed\n", "bad.scn")
    with pytest.raises(ScenarioError, match="graph"):
        parse_scenario("name: x\n", "bad.scn")
    with pytest.raises(ScenarioError):
        parse_scenario("graph:\n  n: 1\n  edges: []\nbogus: 3\n")


# ---------------------------------------------------------------- simulation behavior


def test_single_agent_on_reference_moves_at_v_d():
    sc = bundled("single_agent")
    vd = np.array(sc.v_d)
    p0 = np.array(sc.initial.p)
    sc = replace(sc, initial=InitialSpec(p=sc.initial.p, v=(tuple(vd),), theta_hat="true"))
    tr = run(sc)
    want = p0[0] + tr.t[:, None] * vd
    assert np.abs(tr.p[:, 0] - want).max() < 1e-9
    assert np.abs(tr.e).max() < 1e-10


def test_single_agent_tracking_error_vanishes():
    sc = replace(bundled("single_agent"), duration=30.0)
    tr = run(sc)
    arm, ke, Pi = sc.make_plant(), sc.gain_set().k_e[0], sc.gains.Pi
    e = np.linalg.norm(tr.e[:, 0], axis=1)
    # dissipation: the integral of k_e |e|^2 cannot exceed the initial Lyapunov value
    v0 = arm.lyapunov(tr.p[:1, 0], tr.e[:1, 0], tr.theta_hat[:1, 0], Pi)[0]
    assert trapezoid(ke * e**2, tr.t) <= v0
    assert e[0] > 0.5
    assert e[tr.t >= 20.0].max() < 1e-2 * e[0]


def test_identical_agents_stay_together():
    sc = bundled("paper_leader")
    n = sc.graph.n
    same_p = tuple(tuple(r) for r in np.tile([0.2, -0.1], (n, 1)))
    same_v = tuple(tuple(r) for r in np.tile(sc.v_d, (n, 1)))
    init = InitialSpec(p=same_p, v=same_v, vhat=same_v, theta_hat="true")
    tr = run(replace(sc, duration=4.0, initial=init))
    assert spread(tr.p).max() < 1e-12
    assert spread(tr.v).max() < 1e-12


def test_run_is_deterministic(short_leader):
    sc, tr = short_leader
    again = run(sc)
    assert trace_text(tr) == trace_text(again)


def test_reference_velocity_is_continuous(short_leader):
    """v_r increments match the trapezoid integral of its derivative rebuilt from states.

    A jump at a sampling instant would leave a residual of the jump's size; the
    trapezoid truncation error at a 10 ms sample spacing is a few 1e-4.
    """
    sc, tr = short_leader
    g = sc.gain_set()
    assert np.array_equal(tr.vr, tr.eta + tr.vbar)
    dvr = -g.k_eta[None, :, None] * tr.eta - g.lam[None, :, None] * (tr.p - tr.psi) + tr.dvbar
    dt = np.diff(tr.t)[:, None, None]
    residual = np.diff(tr.vr, axis=0) - 0.5 * dt * (dvr[1:] + dvr[:-1])
    assert np.abs(residual).max() < 1e-3


def test_broadcast_on_sampling_grid(short_leader):
    sc, tr = short_leader
    T = sc.comm.T
    stride = int(round(T / sc.sample_dt))
    assert tr.messages
    for msg in tr.messages[:500]:
        assert msg.send_time == pytest.approx(msg.stamp * T, abs=1e-12)
        assert msg.delivery_time >= msg.send_time
        assert np.array_equal(msg.position, tr.p[msg.stamp * stride, msg.sender - 1])
        assert np.array_equal(msg.vhat, tr.vhat[msg.stamp, msg.sender - 1])


def test_trace_file_round_trip(short_leader, tmp_path):
    sc, tr = short_leader
    path = tmp_path / "t.csv"
    digest = emit_trace(tr, path)
    back = load_trace(path)
    assert back.scenario == sc
    for name in ("t", "p", "v", "e", "vr", "theta_hat", "vhat"):
        assert np.array_equal(getattr(back, name), getattr(tr, name))
    assert back.neighbor_sets == tr.neighbor_sets
    assert emit_trace(back, tmp_path / "u.csv") == digest
    header = json.loads(path.read_text().splitlines()[0][2:])
    assert header["hash"] == digest


def test_trace_hash_detects_tampering(short_leader, tmp_path):
    _, tr = short_leader
    path = tmp_path / "t.csv"
    emit_trace(tr, path)
    lines = path.read_text().splitlines(keepends=True)
    lines[5] = lines[5].replace("0", "1", 1)
    path.write_text("".join(lines))
    with pytest.raises(TraceFormatError):
        load_trace(path)
    load_trace(path, verify=False)


def test_replay_matches_generated_delays(short_leader, tmp_path):
    sc, tr = short_leader
    path = tmp_path / "d.csv"
    export_delays(path, generate_delays(sc))
    again = run(sc, import_delays(path))
    assert trace_text(again) == trace_text(tr)


def test_metrics_semantics(short_leader):
    sc, tr = short_leader
    rep = metrics(tr, window=1.0)
    assert rep.leader_semantics and np.allclose(rep.v_ref, sc.v_d)
    assert rep.final["max"]["position_spread"] >= rep.final["mean"]["position_spread"]


def test_divergence_raises():
    sc = replace(bundled("single_agent"), gains=replace(bundled("single_agent").gains, k_e=1e7))
    with pytest.raises(SimulationDiverged):
        run(sc)


# ---------------------------------------------------------------- command line


def test_cli_check_gains(capsys):
    assert main(["check-gains", "paper_leader"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["pass"] and out["h_star"] == 1.3
    assert out["agents"][0]["margin"] == pytest.approx(np.sqrt(13) - 3.6, abs=1e-12)
    assert out["rho_gamma"] < 1
    assert main(["check-gains", "paper_leader", "--h-star", "2.0"]) == 1


def test_cli_run_and_analyze(tmp_path, capsys):
    trace, delays = tmp_path / "t.csv", tmp_path / "d.csv"
    assert main(["run", "single_agent", "--out", str(trace), "--delays-out", str(delays)]) == 0
    capsys.readouterr()
    assert main(["analyze", str(trace)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert "metrics" in out and "jointly_rooted" in out
    assert main(["replay", "single_agent", "--delays", str(delays)]) == 0


def test_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.scn"
    bad.write_text("graph:\n  n: 1\n  edges: []\ndt: 0.003\n")
    assert main(["run", str(bad)]) == 1
    assert main(["run", str(tmp_path / "missing.scn")]) == 1
    junk = tmp_path / "junk.csv"
    junk.write_text("not a trace\n")
    assert main(["analyze", str(junk)]) == 1
    sc = bundled("single_agent")
    stiff = tmp_path / "stiff.scn"
    save_scenario(replace(sc, gains=replace(sc.gains, k_e=1e7)), stiff)
    assert main(["run", str(stiff)]) == 2
    assert "error" in capsys.readouterr().err
