import json

import numpy as np
import pytest

from mlfm.cli import main, read_dist, read_trajectory
from mlfm.gaussian import wasserstein2

CONFIG = {"T_values": [3.0], "dt_values": [1.0], "orders": [3], "replications": 2}


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps(CONFIG))
    return tmp_path


def test_pipeline(workdir, capsys):
    d = workdir
    assert main(["--seed", "4", "simulate", "--config", str(d / "c.json"), "--out", str(d / "traj.csv")]) == 0
    header = (d / "traj.csv").read_text().splitlines()[0]
    assert header == "t,x,y,g,G"
    traj = read_trajectory(d / "traj.csv")
    assert traj.times.tolist() == [0.0, 1.0, 2.0, 3.0]
    assert np.allclose(np.linalg.norm(traj.states, axis=1), 1.0)

    assert main(["truth", "--traj", str(d / "traj.csv"), "--out", str(d / "truth.json")]) == 0
    assert main(["fit", "--traj", str(d / "traj.csv"), "--order", "3", "--out", str(d / "fit.json")]) == 0
    fit = json.loads((d / "fit.json").read_text())
    assert {"mean", "cov", "diagnostics"} <= set(fit)
    assert len(fit["mean"]) == 4 and np.array(fit["cov"]).shape == (4, 4)

    capsys.readouterr()
    assert main(["compare", "--a", str(d / "fit.json"), "--b", str(d / "truth.json")]) == 0
    printed = float(capsys.readouterr().out.strip())
    assert printed == wasserstein2(read_dist(d / "fit.json"), read_dist(d / "truth.json"))


def test_simulate_seed_flag_position(workdir):
    d = workdir
    main(["--seed", "9", "simulate", "--out", str(d / "a.csv"), "--config", str(d / "c.json")])
    main(["simulate", "--seed", "9", "--out", str(d / "b.csv"), "--config", str(d / "c.json")])
    main(["simulate", "--seed", "10", "--out", str(d / "c.csv"), "--config", str(d / "c.json")])
    assert (d / "a.csv").read_text() == (d / "b.csv").read_text() != (d / "c.csv").read_text()


def test_experiment_byte_identical(workdir):
    d = workdir
    for out in ("r1", "r2"):
        assert main(["experiment", "--config", str(d / "c.json"), "--out-dir", str(d / out)]) == 0
    raw1 = (d / "r1" / "raw.csv").read_bytes()
    assert raw1 == (d / "r2" / "raw.csv").read_bytes()
    assert len(raw1.decode().splitlines()) == 3
    assert len((d / "r1" / "summary.csv").read_text().splitlines()) == 2


def test_errors_exit_nonzero(workdir, capsys):
    d = workdir
    (d / "bad.json").write_text(json.dumps({"T_values": [3.0], "dt_values": [0.7]}))
    assert main(["experiment", "--config", str(d / "bad.json"), "--out-dir", str(d / "x")]) != 0
    assert "error" in capsys.readouterr().err
    assert main(["compare", "--a", str(d / "missing.json"), "--b", str(d / "missing.json")]) != 0
    (d / "t.csv").write_text("t,x\n0,1\n")
    assert main(["truth", "--traj", str(d / "t.csv"), "--out", str(d / "o.json")]) != 0
    with pytest.raises(SystemExit) as exc:
        main(["nonsense"])
    assert exc.value.code != 0
