import json
from pathlib import Path

import numpy as np
import pytest

from predcbf.cli import main
from predcbf.grid import load, save
from setups import blue_grid

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def small_config(tmp_path, name="single_integrator", counts=(11, 11), **changes):
    cfg = json.loads((CONFIGS / f"{name}.json").read_text())
    cfg["domain"]["counts"] = list(counts)
    for key, val in changes.items():
        cfg[key] = val
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def si_grid_file(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = small_config(d)
    out = d / "si.cbfg"
    assert main(["synth", "--config", str(cfg), "--out", str(out), "--threads", "2"]) == 0
    return out


def test_shipped_configs_parse(tmp_path):
    from predcbf.config import load_config

    names = sorted(p.stem for p in CONFIGS.glob("*.json"))
    assert len(names) >= 6
    for n in names:
        load_config(CONFIGS / f"{n}.json")


def test_synth_reports_points(tmp_path, capsys):
    cfg = small_config(tmp_path, counts=(5, 5))
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "g.cbfg")]) == 0
    out = capsys.readouterr().out
    assert "points: 25" in out and "wall time" in out and "crc32c" in out
    meta = load(tmp_path / "g.cbfg").meta
    assert meta["config"]["domain"]["counts"] == [5, 5]


def test_synth_validation_failure_exits_2(tmp_path, capsys):
    cfg = json.loads((CONFIGS / "single_integrator.json").read_text())
    cfg["synthesis"].pop("tbar")  # gamma*T = 20 >= delta
    cfg["domain"]["counts"] = [5, 5]
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(cfg))
    assert main(["synth", "--config", str(p), "--out", str(tmp_path / "g.cbfg")]) == 2
    assert "gamma*T < delta" in capsys.readouterr().err


def test_unknown_config_key_exits_2(tmp_path):
    cfg = json.loads((CONFIGS / "single_integrator.json").read_text())
    cfg["colour"] = "red"
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(cfg))
    assert main(["synth", "--config", str(p), "--out", str(tmp_path / "g.cbfg")]) == 2


def test_eval_node_and_errors(si_grid_file, capsys):
    g = load(si_grid_file)
    assert main(["eval", "--grid", str(si_grid_file), "--state", "10,10;-10,0"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert float(lines[0].split("H=")[1]) == g.values[-1]
    assert main(["eval", "--grid", str(si_grid_file), "--state", "12,0"]) == 3
    assert main(["eval", "--grid", str(si_grid_file), "--state", "1,2,3"]) == 3


def test_eval_reads_csv_file(si_grid_file, tmp_path, capsys):
    f = tmp_path / "states.csv"
    f.write_text("# comment\n0,0\n5,5\n")
    assert main(["eval", "--grid", str(si_grid_file), "--state", str(f)]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 2


def test_check_pass_and_corrupted(si_grid_file, tmp_path, capsys):
    rep = tmp_path / "r.json"
    assert main(["check", "--grid", str(si_grid_file), "--report", str(rep)]) == 0
    assert json.loads(rep.read_text())["passed"]
    g = load(si_grid_file)
    g.values[:] += 3.0
    bad = tmp_path / "bad.cbfg"
    save(g, bad)
    assert main(["check", "--grid", str(bad), "--report", str(rep)]) == 1
    assert "upper_bound" in capsys.readouterr().err
    blob = bad.read_bytes()
    bad.write_bytes(blob[:-20])
    assert main(["check", "--grid", str(bad), "--report", str(rep)]) == 1
    assert not json.loads(rep.read_text())["checks"]["file_integrity"]["passed"]


def test_check_with_second_grid_has_monotonicity(si_grid_file, tmp_path):
    rep = tmp_path / "r.json"
    assert main(["check", "--grid", str(si_grid_file), "--grid2", str(si_grid_file), "--report", str(rep)]) == 0
    assert "monotonicity" in json.loads(rep.read_text())


def test_simulate_static_and_bad_schedule(si_grid_file, tmp_path):
    cfg = small_config(tmp_path, simulate={"x0": [-9.8, 1.0], "t_end": 6.0})
    out = tmp_path / "log.csv"
    assert main(["simulate", "--config", str(cfg), "--grid", str(si_grid_file), "--out", str(out)]) == 0
    text = out.read_text().splitlines()
    assert text[0].startswith("# config: ")
    assert text[1].startswith("t,x0,x1,ub0,ub1,us0,us1,H_shifted_min")
    fast = small_config(tmp_path, simulate={"x0": [-9.8, 1.0], "t_end": 6.0},
                        shift={"kind": "sinusoid_abs", "r": 9.0, "r_max": 4.0, "tau_p": 2.0, "sigma": 0.0})
    assert main(["simulate", "--config", str(fast), "--grid", str(si_grid_file), "--out", str(out)]) == 4


def test_simulate_without_grids_is_baseline(tmp_path):
    cfg = small_config(tmp_path, simulate={"x0": [-9.8, 1.0], "t_end": 2.0, "dt": 0.5})
    out = tmp_path / "log.csv"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    rows = [r.split(",") for r in out.read_text().splitlines()[2:]]
    assert len(rows) == 5
    for r in rows:
        assert r[3:5] == r[5:7]


def test_export_slice_trajectory_levelset(si_grid_file, tmp_path):
    sl = tmp_path / "slice.csv"
    assert main(["export", "--in", str(si_grid_file), "--what", "slice", "--out", str(sl)]) == 0
    data = np.loadtxt(sl, delimiter=",", skiprows=1)
    np.testing.assert_array_equal(data[:, 2], load(si_grid_file).values)

    cfg = small_config(tmp_path, simulate={"x0": [-9.8, 1.0], "t_end": 1.0})
    log = tmp_path / "log.csv"
    main(["simulate", "--config", str(cfg), "--grid", str(si_grid_file), "--out", str(log)])
    tr = tmp_path / "traj.csv"
    assert main(["export", "--in", str(log), "--what", "trajectory", "--out", str(tr)]) == 0
    assert tr.read_text().splitlines()[0] == "t,x,y"

    with pytest.raises(SystemExit) as exc:
        main(["export", "--in", str(si_grid_file), "--what", "surface", "--out", str(tr)])
    assert exc.value.code == 2


def test_levelset_of_positive_slice_is_empty(tmp_path):
    g = blue_grid()
    g2 = type(g)(g.axes, np.abs(g.values) + 1.0, g.flags, dict(g.meta))
    src = tmp_path / "pos.cbfg"
    save(g2, src)
    out = tmp_path / "ls.csv"
    assert main(["export", "--in", str(src), "--what", "levelset", "--out", str(out)]) == 0
    assert out.read_text().splitlines() == ["contour,x,y"]


def test_threads_do_not_change_file_bytes(tmp_path):
    cfg = small_config(tmp_path, name="single_integrator_forward", counts=(7, 7))
    a, b = tmp_path / "a.cbfg", tmp_path / "b.cbfg"
    assert main(["synth", "--config", str(cfg), "--out", str(a), "--threads", "1"]) == 0
    assert main(["synth", "--config", str(cfg), "--out", str(b), "--threads", "8"]) == 0
    assert a.read_bytes() == b.read_bytes()
