import json

import numpy as np
import pytest

from gasnet.benchmarks import cyclic5
from gasnet.cli import EXIT_FAIL, EXIT_INPUT, EXIT_OK, main, read_policy, read_trajectory
from gasnet.network import (
    parse_network,
    parse_scenario,
    refine,
    serialize_network,
    serialize_scenario,
)


@pytest.fixture(scope="module")
def docs(tmp_path_factory):
    d = tmp_path_factory.mktemp("bench")
    assert main(["bench", "--name", "cyclic5", "--emit", str(d)]) == EXIT_OK
    return d / "cyclic5_network.json", d / "cyclic5_scenario.json"


def test_bench_documents_round_trip(docs):
    net_path, sc_path = docs
    net, sc = cyclic5()
    again = parse_network(net_path.read_text())
    assert again == net
    sc2 = parse_scenario(sc_path.read_text(), again)
    for t in np.linspace(0, sc.horizon, 9):
        np.testing.assert_array_equal(sc2.withdrawal_vector(net, t), sc.withdrawal_vector(net, t))
    assert main(["validate", "--network", str(net_path), "--scenario", str(sc_path)]) == EXIT_OK


def test_bench_output_is_byte_identical(tmp_path, docs):
    assert main(["bench", "--name", "cyclic5", "--emit", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "cyclic5_network.json").read_bytes() == docs[0].read_bytes()


def test_input_errors_exit_2(tmp_path, capsys):
    assert main(["bench", "--name", "nonesuch", "--emit", str(tmp_path)]) == EXIT_INPUT
    assert main(["validate", "--network", str(tmp_path / "missing.json")]) == EXIT_INPUT
    bad = tmp_path / "bad.json"
    bad.write_text('{"nodes": [')
    assert main(["validate", "--network", str(bad)]) == EXIT_INPUT
    assert "line 1" in capsys.readouterr().err
    assert main(["frobnicate"]) == EXIT_INPUT
    assert main(["bode", "--variants", "1,2", "--out", str(tmp_path / "b.csv")]) == EXIT_INPUT
    assert main(["mpc", "--network", "cyclic5", "--dt-minutes", "0",
                 "--out", str(tmp_path / "x")]) == EXIT_INPUT


def test_refine_reports_sizes_and_dumps(tmp_path, capsys):
    out = tmp_path / "r.json"
    assert main(["refine", "--network", "cyclic5", "--max-km", "5", "--out", str(out),
                 "--dump-coo", str(tmp_path / "inc")]) == EXIT_OK
    assert "48 edges" in capsys.readouterr().out
    net, _ = cyclic5()
    assert out.read_text() == serialize_network(refine(net, 5000.0).network) + "\n"
    head = (tmp_path / "inc_M.txt").read_text().splitlines()[0]
    assert head == "# shape 48 47"


def test_steady_and_simulate(tmp_path):
    assert main(["steady", "--network", "cyclic5", "--out", str(tmp_path / "s.csv")]) == EXIT_OK
    tr = read_trajectory(str(tmp_path / "s.csv"))
    assert tr.rho.shape == (1, 47) and tr.rho.min() >= 21.0
    assert main(["simulate", "--network", "cyclic5", "--dt-seconds", "3600",
                 "--out", str(tmp_path / "sim.csv"), "--plot"]) == EXIT_OK
    sim = read_trajectory(str(tmp_path / "sim.csv"))
    assert sim.times[-1] == 86400.0
    assert (tmp_path / "sim.png").stat().st_size > 0


def test_linearize_exports_matrix(tmp_path):
    assert main(["linearize", "--network", "cyclic5", "--out", str(tmp_path / "lin")]) == EXIT_OK
    assert (tmp_path / "lin_A.txt").read_text().startswith("# shape 95 95")
    assert len((tmp_path / "lin_F.txt").read_text().split()) == 95


def test_spectrum_csv(tmp_path):
    out = tmp_path / "spec.csv"
    assert main(["spectrum", "--network", "cyclic5", "--poles", "2", "--out", str(out)]) == EXIT_OK
    rows = out.read_text().splitlines()
    assert rows[0] == "re,im,source"
    eig = [r for r in rows[1:] if r.endswith(",eig")]
    pole = [r for r in rows[1:] if r.endswith(",pole")]
    assert len(eig) == 95 and len(pole) == 48 * 3 * 2


def test_bode_four_variants_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["bode", "--network", "pipe5km", "--variants", "all", "--points", "50",
                 "--out", str(a), "--plot"]) == EXIT_OK
    assert main(["bode", "--network", "pipe5km", "--variants", "all", "--points", "50",
                 "--out", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    rows = a.read_text().splitlines()
    assert rows[0].startswith("variant,f_cyc_per_hr,mag_G11,phase_G11")
    assert len(rows) == 1 + 4 * 50
    assert {r.split(",")[0] for r in rows[1:]} == {"alpha1_delta1", "alpha0_delta1",
                                                   "alpha1_delta0", "alpha0_delta0"}
    assert (tmp_path / "a.png").exists()


def test_bound_writes_curves(tmp_path, capsys):
    out = tmp_path / "bound.csv"
    assert main(["bound", "--network", "cyclic5", "--samples", "11", "--out", str(out)]) == EXIT_OK
    rows = out.read_text().splitlines()
    assert rows[0] == "t,E_U,E_T,empirical_gap"
    vals = np.array([[float(v) for v in r.split(",")[:3]] for r in rows[1:]])
    assert vals[0, 1] == 0.0 and np.all(np.diff(vals[:, 1]) >= 0)
    assert "E_T reaches 1%" in capsys.readouterr().out


def test_infeasible_run_exits_1(tmp_path):
    net, sc = cyclic5()
    doc = json.loads(serialize_network(net))
    doc["parameters"].update(rho_min=0.0, rho_max=10.0)  # far below the supply density
    p = tmp_path / "capped.json"
    p.write_text(json.dumps(doc))
    sc_path = tmp_path / "sc.json"
    sc_path.write_text(serialize_scenario(sc))
    code = main(["mpc", "--network", str(p), "--scenario", str(sc_path), "--out", str(tmp_path / "w")])
    assert code == EXIT_FAIL
    s = json.loads((tmp_path / "w_summary.json").read_text())
    assert s["status"] == "infeasible" and s["message"].startswith("step 1")


def test_mpc_and_oc_summaries(tmp_path):
    m, o = str(tmp_path / "mpc"), str(tmp_path / "oc")
    assert main(["mpc", "--network", "cyclic5", "--mode", "nonlinear", "--out", m]) == EXIT_OK
    assert main(["oc", "--network", "cyclic5", "--mode", "nonlinear", "--out", o,
                 "--reference", m + "_trajectory.csv",
                 "--reference-summary", m + "_summary.json", "--plot"]) == EXIT_OK
    s = json.loads((tmp_path / "oc_summary.json").read_text())
    assert s["status"] == "optimal" and s["command"] == "oc"
    assert s["energy_gap"] <= 0.05
    assert {"E_rho", "E_phi", "E_mu", "network_hash", "wall_time_s"} <= set(s)
    pol = read_policy(m + "_policy.csv")
    assert pol.ratios.shape == (25, 3)
    assert (tmp_path / "oc_trajectory.png").exists()


def test_mpc_is_reproducible(tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    args = ["mpc", "--network", "cyclic5", "--dt-minutes", "120"]
    assert main(args + ["--out", a]) == EXIT_OK
    assert main(args + ["--out", b]) == EXIT_OK
    for suffix in ("_trajectory.csv", "_policy.csv"):
        assert open(a + suffix, "rb").read() == open(b + suffix, "rb").read()
    sa, sb = (json.loads(open(x + "_summary.json").read()) for x in (a, b))
    sa.pop("wall_time_s")
    sb.pop("wall_time_s")
    assert sa == sb


def test_thread_cap_variable(tmp_path, monkeypatch):
    monkeypatch.setenv("GASNET_THREADS", "1")
    assert main(["refine", "--network", "cyclic5"]) == EXIT_OK
    monkeypatch.setenv("GASNET_THREADS", "many")
    assert main(["refine", "--network", "cyclic5"]) == EXIT_INPUT
