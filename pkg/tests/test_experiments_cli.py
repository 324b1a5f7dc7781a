import json
import subprocess
import sys
import threading

import numpy as np
import pytest

from swb import cli
from swb import experiments as ex
from swb.discrete_ot import load_measure
from swb.errors import InstanceTooLarge, InvalidArgument
from swb.geometry import rotate_about_axis
from swb.support import cover_radius, load_grid, mesh_grid

SMALL_RUN = dict(J=2, n=49, gamma=0.1, iterations=4000, snapshot_every=1000)


# -- config ------------------------------------------------------------------------


def test_kind_defaults():
    assert ex.ExperimentConfig.for_kind("custom") == ex.ExperimentConfig()
    v = ex.ExperimentConfig.for_kind("vmf-drift")
    assert (v.J, v.kappa, v.drift, v.gamma, v.window) == (4, 30.0, 3e-5, 1.0, 10_000)
    w = ex.ExperimentConfig.for_kind("wasp")
    assert (w.J, w.dim, w.n_points) == (8, 3, 10_000)
    with pytest.raises(InvalidArgument):
        ex.ExperimentConfig.for_kind("skin")


def test_ini_and_overrides(tmp_path):
    p = tmp_path / "exp.ini"
    p.write_text("[experiment]\nkind = vmf-drift\nn = 500\ngamma = 0.5\nintercept = yes\n")
    cfg = ex.ExperimentConfig.from_ini(p)
    assert (cfg.kind, cfg.n, cfg.gamma, cfg.intercept) == ("vmf-drift", 500, 0.5, True)
    assert cfg.window == 10_000  # kind default survives
    cfg2 = cfg.updated(n="64", seed=3, window=None)
    assert (cfg2.n, cfg2.seed, cfg2.window) == (64, 3, 10_000)
    assert cfg2.digest() != cfg.digest()
    assert cfg.updated().digest() == cfg.digest()


@pytest.mark.parametrize("change", [dict(J=0), dict(gamma=0.0), dict(kind="x"), dict(window=-1),
                                    dict(transport="udp"), dict(drift=4.0), dict(schedule="lifo")])
def test_config_validation(change):
    with pytest.raises(InvalidArgument):
        ex.ExperimentConfig().updated(**change)


def test_config_file_errors(tmp_path):
    with pytest.raises(InvalidArgument):
        ex.ExperimentConfig.from_ini(tmp_path / "missing.ini")
    p = tmp_path / "bad.ini"
    p.write_text("[other]\nn = 3\n")
    with pytest.raises(InvalidArgument):
        ex.ExperimentConfig.from_ini(p)
    p.write_text("[experiment]\nbogus = 3\n")
    with pytest.raises(InvalidArgument):
        ex.ExperimentConfig.from_ini(p)


# -- reports -----------------------------------------------------------------------


def test_report_rows_monotone():
    r = ex.RunReport(["iteration", "x"])
    r.add(1, 0.5)
    r.add(1, 0.6)
    with pytest.raises(InvalidArgument):
        r.add(0, 0.7)
    with pytest.raises(InvalidArgument):
        r.add(2)


def test_csv_round_trip(tmp_path, rng):
    vals = rng.normal(size=(20, 3)) * 10.0 ** rng.integers(-300, 300, size=(20, 3))
    rows = [(i, *v) for i, v in enumerate(vals)]
    ex.write_csv(tmp_path / "r.csv", ["iteration", "a", "b", "c"], rows)
    cols, back = ex.read_csv(tmp_path / "r.csv")
    assert cols == ["iteration", "a", "b", "c"]
    np.testing.assert_array_equal(np.array(back), np.array(rows, dtype=float))


def test_report_write(tmp_path):
    cfg = ex.ExperimentConfig(**SMALL_RUN)
    rep = ex.cmd_run(cfg)
    rep.write(tmp_path)
    assert set(p.name for p in tmp_path.iterdir()) == {"report.csv", "grid.txt", "meta.json", "weights.txt"}
    meta = json.loads((tmp_path / "meta.json").read_text())
    assert meta["config_hash"] == cfg.digest()
    assert meta["seed"] == 0
    mu = load_measure(tmp_path / "weights.txt")
    np.testing.assert_array_equal(mu.weights, rep.weights)
    np.testing.assert_array_equal(load_grid(tmp_path / "grid.txt").atoms, rep.grid.atoms)


def strip_clock(rep):
    keep = [k for k, c in enumerate(rep.columns) if c != "wall_clock"]
    return [tuple(r[k] for k in keep) for r in rep.rows]


def test_run_reproducible_from_config_and_seed():
    cfg = ex.ExperimentConfig(**SMALL_RUN, seed=5)
    a, b = ex.cmd_run(cfg), ex.cmd_run(cfg)
    assert strip_clock(a) == strip_clock(b)
    np.testing.assert_array_equal(a.weights, b.weights)
    c = ex.cmd_run(cfg.updated(seed=6))
    assert not np.array_equal(a.weights, c.weights)
    assert [r[0] for r in a.rows] == [1000, 2000, 3000, 4000]


def test_run_means_must_match_J():
    with pytest.raises(InvalidArgument):
        ex.cmd_run(ex.ExperimentConfig(**dict(SMALL_RUN, J=3)))


# -- vmf drift -----------------------------------------------------------------------


def small_vmf(**kw):
    base = dict(n=300, iterations=24_000, window=4000, snapshot_every=2000)
    base.update(kw)
    return ex.ExperimentConfig.for_kind("vmf-drift").updated(**base)


def test_vmf_drift_reproducible_and_reference():
    cfg = small_vmf(seed=2, drift=1e-4)
    a, b = ex.cmd_vmf_drift(cfg), ex.cmd_vmf_drift(cfg)
    assert strip_clock(a) == strip_clock(b)
    # the reference is the rotated Frechet mean of the initial centres
    C = np.array(a.meta["centers"])
    ref0 = ex.frechet_mean(C)
    np.testing.assert_allclose(a.meta["reference_start"], ref0)
    last = a.rows[-1]
    ref = rotate_about_axis(ref0, [1.0, 0.0, 0.0], 1e-4 * last[0] / 4)[0]
    md = np.array(last[3:6])
    assert last[2] == pytest.approx(ex.geodesic_distance(md, ref))
    assert a.rows[0][0] >= 4000  # snapshots wait for a full window


def test_vmf_stationary_error_nonincreasing():
    rep = ex.cmd_vmf_drift(small_vmf(drift=0.0, window=0, iterations=40_000, snapshot_every=4000))
    err = rep.column("tracking_error")
    warm = err[2:]
    assert np.all(np.diff(warm) <= 0.01), err
    assert warm[-1] <= 0.1


def test_frechet_mean_of_symmetric_centres():
    C = ex.vmf_centers(4, 0.5, np.random.default_rng(0))
    np.testing.assert_allclose(ex.frechet_mean(C), [0.0, 0.0, 1.0], atol=1e-9)
    np.testing.assert_allclose(np.arccos(C[:, 2]), 0.5)


# -- wasp ----------------------------------------------------------------------------


def test_synthetic_logistic_shape_and_order(rng):
    X, y, theta = ex.synthetic_logistic(500, 3, rng, order_noise=0.0)
    assert X.shape == (500, 3) and set(np.unique(y)) <= {0, 1}
    np.testing.assert_array_equal(theta, [1.0, 0.0, -1.0])
    assert np.all(np.diff(X[:, 1]) >= 0)


def test_wasp_reads_csv_and_reports(tmp_path, rng):
    X, y, _ = ex.synthetic_logistic(400, 2, rng, theta=np.array([1.5, -1.0]))
    p = tmp_path / "data.csv"
    np.savetxt(p, np.column_stack([X, y]), delimiter=",", header="x0,x1,label", comments="")
    cfg = ex.ExperimentConfig.for_kind("wasp").updated(
        data=str(p), J=2, n=64, iterations=2000, burn_in=1000, thinning=1, w2_samples=100,
        full_thinning=2, gammas="0.01 0.1", proposal_sigma=0.1)
    rep = ex.cmd_wasp(cfg)
    assert rep.column("gamma").tolist() == [0.01, 0.1]
    assert rep.grid.dim == 2
    assert len(rep.meta["w2_subsets"]) == 2
    assert np.all(rep.column("w2_subset_min") <= rep.column("w2_subset_max"))


@pytest.mark.slow
def test_wasp_single_subset_sits_at_the_noise_floor():
    # with J=1 the subset posterior is the full posterior, so its distance to
    # the reference chain is the resampling noise floor
    cfg = ex.ExperimentConfig.for_kind("wasp").updated(
        J=1, seed=1, n_points=3000, burn_in=6000, iterations=8000, w2_samples=300, n=500)
    rep = ex.cmd_wasp(cfg)
    _, _, _, w2_bary, w2_sub, _ = rep.rows[0]
    assert w2_bary <= 1.5 * w2_sub


def test_wasp_missing_dataset(tmp_path):
    cfg = ex.ExperimentConfig.for_kind("wasp").updated(data=str(tmp_path / "nope.csv"))
    with pytest.raises(OSError, match="nope.csv"):
        ex.cmd_wasp(cfg)


# -- refinement and eval ------------------------------------------------------------------


def test_refinement_single_row_and_cover_radius():
    cfg = ex.ExperimentConfig(J=2, gamma=0.1, iterations=2000, eval_samples=500)
    rep = ex.cmd_refinement_sweep(cfg, ns=[27], probes=5000)
    assert len(rep.rows) == 1
    n, grid_n, radius, obj, _ = rep.rows[0]
    box = ex.gaussian_box([[0, 0], [3, 4]], 1.0)
    grid = mesh_grid(box, 27)
    assert grid_n == grid.n
    P = box.lo + np.random.default_rng(0).random((5000, 2)) * box.lengths
    assert radius == cover_radius(grid, P)
    assert obj > 0


def write_points(path, pts):
    np.savetxt(path, np.atleast_2d(pts))
    return path


def test_eval_w2_examples(tmp_path, rng):
    a = write_points(tmp_path / "a.txt", rng.normal(size=(40, 2)))
    assert ex.cmd_eval_w2(a, a) == pytest.approx(0.0, abs=1e-7)
    p = write_points(tmp_path / "p.txt", [[0.0, 0.0]])
    q = write_points(tmp_path / "q.txt", [[0.0, 3.0]])
    assert ex.cmd_eval_w2(p, q) == pytest.approx(3.0)
    g1 = write_points(tmp_path / "g1.txt", rng.normal(0, 1, (300, 1)))
    g2 = write_points(tmp_path / "g2.txt", rng.normal(5, 1, (300, 1)))
    assert abs(ex.cmd_eval_w2(g1, g2) - 5.0) <= 0.5
    big = write_points(tmp_path / "big.txt", rng.normal(size=(600, 1)))
    with pytest.raises(InstanceTooLarge):
        ex.cmd_eval_w2(big, g1)
    assert ex.cmd_eval_w2(big, g2, subsample=300) == pytest.approx(5.0, rel=0.1)


# -- command line -------------------------------------------------------------------------


def test_cli_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "run"
    rc = cli.main(["run", "--J", "2", "--n", "49", "--gamma", "0.1", "--iterations", "3000",
                   "--snapshot-every", "1000", "--seed", "1", "--out", str(out)])
    assert rc == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "iteration,wall_clock,min_s"
    assert len(lines) == 4
    assert (out / "report.csv").exists() and (out / "weights.txt").exists()


def test_cli_config_file_and_flag_override(tmp_path, capsys):
    ini = tmp_path / "c.ini"
    ini.write_text("[experiment]\nn = 49\ngamma = 0.1\niterations = 2000\nsnapshot_every = 500\n")
    assert cli.main(["run", "--config", str(ini), "--iterations", "1000", "--out", str(tmp_path / "o")]) == 0
    meta = json.loads((tmp_path / "o" / "meta.json").read_text())
    assert meta["config"]["iterations"] == 1000
    assert meta["config"]["gamma"] == 0.1


def test_cli_refine_and_eval(tmp_path, capsys):
    assert cli.main(["refine", "--refine-ns", "8", "--iterations", "1000", "--eval-samples", "200"]) == 0
    assert len(capsys.readouterr().out.strip().splitlines()) == 2
    a = write_points(tmp_path / "a.txt", [[0.0, 0.0]])
    b = write_points(tmp_path / "b.txt", [[3.0, 0.0]])
    assert cli.main(["eval-w2", str(a), str(b)]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(3.0)


def test_cli_errors_return_2(tmp_path, capsys):
    big = write_points(tmp_path / "big.txt", np.zeros((501, 1)))
    assert cli.main(["eval-w2", str(big), str(big)]) == 2
    assert "error" in capsys.readouterr().err
    junk = tmp_path / "junk.txt"
    junk.write_text("swb-grid euclidean 2 1\n0 0\n")
    assert cli.main(["eval-w2", str(junk), str(big)]) == 2
    assert "not a numeric point file" in capsys.readouterr().err
    assert cli.main(["run", "--J", "0"]) == 2
    assert cli.main(["run", "--config", str(tmp_path / "missing.ini")]) == 2
    with pytest.raises(SystemExit):
        cli.main(["frobnicate"])


def test_cli_make_grid(tmp_path, capsys):
    p = tmp_path / "g.txt"
    assert cli.main(["make-grid", "--n", "64", str(p)]) == 0
    info = json.loads(capsys.readouterr().out)
    assert load_grid(p).n == info["n"]


def test_cli_serve_master_and_workers(tmp_path, capsys):
    grid_path = tmp_path / "g.txt"
    cli.main(["make-grid", "--n", "64", str(grid_path)])
    capsys.readouterr()
    port = _free_port()
    out = tmp_path / "master"
    workers = [
        subprocess.Popen([sys.executable, "-m", "swb.cli", "worker", "--grid", str(grid_path),
                          "--connect", f"127.0.0.1:{port}", "--worker-id", str(j), "--J", "2",
                          "--gamma", "0.1", "--mean", mean, "--seed", str(j), "--out", str(tmp_path / "w")])
        for j, mean in enumerate(["0 0", "3 4"])
    ]
    rc = {}
    th = threading.Thread(target=lambda: rc.setdefault("m", cli.main(
        ["serve-master", "--grid", str(grid_path), "--listen", f"127.0.0.1:{port}", "--J", "2",
         "--gamma", "0.1", "--iterations", "2000", "--out", str(out)])))
    th.start()
    th.join(60)
    for w in workers:
        assert w.wait(60) == 0
    assert rc["m"] == 0
    weights = np.array([float(x) for x in capsys.readouterr().out.split()])
    assert weights.sum() == pytest.approx(1.0)
    v = sum(np.loadtxt(tmp_path / "w" / f"v{j}.txt") for j in range(2))
    assert v.shape == (load_grid(grid_path).n,)
    assert (out / "report.csv").exists()


def _free_port():
    import socket

    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]
