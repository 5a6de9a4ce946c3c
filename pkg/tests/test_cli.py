import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tfchandra import cli
from tfchandra.errors import NumericalFailure
from tfchandra.radial import RadialDensity, build_grid, write_density_csv

TF_SLOPE = -1.588071022611375


@pytest.fixture(autouse=True)
def private_cache(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.CACHE_ENV, str(tmp_path / "cache"))
    return tmp_path / "cache"


def run(*argv):
    return cli.main([str(a) for a in argv])


def outputs_of(directory: Path) -> dict:
    """All emitted files except the manifest, as bytes keyed by relative path."""
    return {
        p.relative_to(directory).as_posix(): p.read_bytes()
        for p in sorted(directory.rglob("*"))
        if p.is_file() and p.name != cli.MANIFEST
    }


def manifest_of(directory: Path) -> dict:
    return json.loads((directory / cli.MANIFEST).read_text())


def assert_manifest_complete(directory: Path):
    m = manifest_of(directory)
    listed = {o["path"]: o["sha256"] for o in m["outputs"]}
    files = outputs_of(directory)
    assert set(listed) == set(files)
    for name, sha in listed.items():
        assert cli.file_digest(directory / name) == sha
    assert m["tool_version"] == cli.__version__
    assert len(m["config_hash"]) == 64
    assert m["wall_time"] >= 0


@pytest.fixture
def ball_csv(tmp_path):
    g = build_grid("log-uniform", 1e-6, 1.0, 2001)
    return write_density_csv(RadialDensity(g, np.full(g.nodes.size, 3 / (4 * np.pi))), tmp_path / "ball.csv")


SCOTT_SWEEP = "command = scott\ngamma = 0.5, 0.1, 0.3  # unsorted on purpose\nell_max = 4\nn_max = 8\n"


# ----------------------------------------------------------- formatting


@settings(max_examples=200)
@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_cells_round_trip(x):
    assert float(cli.cell(x)) == x
    assert cli.cell(np.float64(x)) == cli.cell(x)


@settings(max_examples=100)
@given(st.dictionaries(st.text(min_size=1, max_size=5), st.floats(allow_nan=False) | st.integers(), max_size=6))
def test_digest_ignores_key_order(d):
    assert cli.digest(d) == cli.digest(dict(reversed(list(d.items()))))


def test_cells_of_other_types():
    assert cli.cell(None) == ""
    assert cli.cell(True) == "true"
    assert cli.cell(np.int64(7)) == "7"
    assert cli.cell("schrodinger") == "schrodinger"


# --------------------------------------------------------------- commands


def test_tf_solve_writes_profile_sidecar_and_manifest(tmp_path):
    out = tmp_path / "tf"
    assert run("tf", "solve", "--tol", "1e-10", "--out", out) == 0
    meta = json.loads((out / "phi.json").read_text())
    assert meta["slope0"] == pytest.approx(TF_SLOPE, abs=1e-9)
    assert (out / "phi.csv").read_text().startswith("x,phi\n")
    assert_manifest_complete(out)
    assert manifest_of(out)["inputs"] == {"q": 2, "tol": 1e-10}


def test_tf_solve_reuses_the_cache(tmp_path, monkeypatch):
    assert run("tf", "solve", "--out", tmp_path / "a") == 0

    def refuse(*a, **k):
        raise AssertionError("cache not used")

    monkeypatch.setattr(cli, "solve_tf_screening", refuse)
    assert run("tf", "solve", "--out", tmp_path / "b") == 0
    assert outputs_of(tmp_path / "a") == outputs_of(tmp_path / "b")


def test_tf_energy_virial(tmp_path):
    out = tmp_path / "e"
    assert run("tf", "energy", "--Z", 10, "--out", out) == 0
    e = json.loads((out / "energy.json").read_text())
    assert e["total"] == pytest.approx(-e["kinetic"], rel=1e-3)
    assert_manifest_complete(out)


def test_coulomb_norm_of_unit_ball(tmp_path, ball_csv, capsys):
    assert run("coulomb", "norm", "--density", ball_csv, "--out", tmp_path / "n") == 0
    printed = float(capsys.readouterr().out.strip())
    assert printed == pytest.approx(math.sqrt(0.6), abs=5e-11)
    m = manifest_of(tmp_path / "n")
    assert m["inputs"]["density"] == {"name": "ball.csv", "sha256": cli.file_digest(ball_csv)}


def test_coulomb_pair_of_unit_ball(tmp_path, ball_csv, capsys):
    assert run("coulomb", "pair", "--density", ball_csv, "--other", ball_csv, "--out", tmp_path / "p") == 0
    assert float(capsys.readouterr().out) == pytest.approx(0.6, rel=1e-9)
    assert_manifest_complete(tmp_path / "p")


def test_missing_density_file_is_invalid(tmp_path):
    assert run("coulomb", "norm", "--density", tmp_path / "nope.csv", "--out", tmp_path / "n") == 2


def test_scott_above_critical_coupling_is_rejected(tmp_path, capsys):
    assert run("scott", "--gamma", 0.6367, "--q", 2, "--out", tmp_path / "s") == 2
    assert "(0, 2/pi]" in capsys.readouterr().err
    assert not (tmp_path / "s").exists()


def test_scott_writes_summary_and_partial_table(tmp_path):
    out = tmp_path / "s"
    assert run("scott", "--gamma", 0.5, "--ell-max", 4, "--n-max", 8, "--out", out) == 0
    summary = json.loads((out / "scott.json").read_text())
    rows = (out / "partial.csv").read_text().splitlines()
    assert rows[0] == "ell,n,difference"
    assert len(rows) - 1 == sum(8 - ell for ell in range(5))
    assert all(float(r.split(",")[2]) > 0 for r in rows[1:])
    assert summary["value"] > 0
    assert_manifest_complete(out)


def test_spectrum_dump(tmp_path):
    out = tmp_path / "sp"
    assert run("spectrum", "--gamma", 0.5, "--operator", "schrodinger", "--ell", 1, "--n-count", 3, "--out", out) == 0
    lines = (out / "spectrum.csv").read_text().splitlines()
    assert lines[0] == "operator,gamma,ell,n,eigenvalue,resolution"
    for line, n in zip(lines[1:], (2, 3, 4)):
        op, g, ell, nn, e, size = line.split(",")
        assert (op, int(ell), int(nn)) == ("schrodinger", 1, n)
        assert float(e) == pytest.approx(-0.25 / (2 * n * n), rel=1e-8)
    meta = json.loads((out / "spectrum.json").read_text())
    assert {"disc", "history", "delta"} <= set(meta)


def test_probe_reports_collapse_above_critical(tmp_path):
    out = tmp_path / "pr"
    assert run("probe-critical", "--gamma", 0.7, "--out", out) == 0
    assert json.loads((out / "probe.json").read_text())["verdict"] == "collapsing"
    assert (out / "probe.csv").read_text().startswith("step,size,momentum_cutoff,ground_state\n")


def test_expand_energy_with_given_s(tmp_path):
    out = tmp_path / "x"
    assert run("expand-energy", "--Z", 20, "--gamma", 0.5, "--s", 0.25, "--out", out) == 0
    e = json.loads((out / "expansion.json").read_text())
    assert e["scott_term"] == pytest.approx((0.5 - 0.25) * 400)
    assert e["total"] == pytest.approx(e["tf_energy"] + e["scott_term"], rel=1e-14)


def test_density_mean_field_and_weak_test(tmp_path):
    out = tmp_path / "mf"
    assert run("density", "mean-field", "--Z", 20, "--out", out) == 0
    meta = json.loads((out / "mean_field.json").read_text())
    assert meta["label"] == "mean-field proxy"
    assert meta["filling"]["last_filled"] == {"n": 4, "ell": 0}
    assert (out / "density_Z20.csv").read_text().startswith("r,rho\n")
    wk = tmp_path / "wk"
    assert run("density", "weak-test", "--Z", 20, "--shell-radius", 0.5, "--out", wk) == 0
    w = json.loads((wk / "weak_test.json").read_text())
    assert abs(w["value"]) <= w["schwarz_bound"]
    assert run("density", "weak-test", "--Z", 20, "--out", tmp_path / "none") == 2


def test_density_shortfall_exits_3_with_manifest(tmp_path, capsys):
    out = tmp_path / "mf40"
    assert run("density", "mean-field", "--Z", 40, "--out", out) == 3
    m = manifest_of(out)
    assert m["status"] == "failed"
    assert m["error"]["class"] == "ModelFailure"
    assert m["error"]["diagnostics"]["capacity"] == 38
    assert "numerical failure" in capsys.readouterr().err


def test_density_converge_keeps_successes(tmp_path):
    out = tmp_path / "cv"
    assert run("density", "converge", "--Z-list", "10,20,40", "--jobs", 1, "--out", out) == 3
    lines = (out / "convergence.csv").read_text().splitlines()
    assert lines[0] == "Z,gamma,distance,unscaled_distance,fitted_exponent"
    assert [float(line.split(",")[0]) for line in lines[1:]] == [10.0, 20.0]
    assert manifest_of(out)["failures"][0]["params"]["Z"] == 40.0
    assert {"density_Z10.csv", "density_Z20.csv"} <= set(outputs_of(out))
    assert_manifest_complete(out)


def test_density_converge_scaling_identity(tmp_path):
    out = tmp_path / "cv"
    assert run("density", "converge", "--Z-list", "10,20,80", "--out", out) == 0
    for line in (out / "convergence.csv").read_text().splitlines()[1:]:
        Z, _, d, raw, slope = map(float, line.split(","))
        assert d**2 * Z ** (7 / 3) == pytest.approx(raw**2, rel=1e-6)
        assert slope < 0
    assert run("density", "converge", "--Z-list", "20,10,80", "--out", out) == 2


def test_config_file_supplies_defaults(tmp_path):
    cfg = tmp_path / "sp.cfg"
    cfg.write_text("gamma = 0.5\noperator = schrodinger\nn_count = 2\n")
    assert run("spectrum", "--config", cfg, "--out", tmp_path / "a") == 0
    assert manifest_of(tmp_path / "a")["inputs"]["operator"] == "schrodinger"
    # explicit flags win over the file
    assert run("spectrum", "--config", cfg, "--n-count", 3, "--out", tmp_path / "b") == 0
    assert len((tmp_path / "b" / "spectrum.csv").read_text().splitlines()) == 4
    cfg.write_text("gamma = banana\n")
    assert run("spectrum", "--config", cfg, "--out", tmp_path / "c") == 2


# ----------------------------------------------------------------- usage


@pytest.mark.parametrize(
    "argv",
    [["bogus"], [], ["tf"], ["tf", "melt"], ["scott"], ["scott", "--gamma", "abc"], ["spectrum", "--gamma", "0.5", "--operator", "dirac"]],
)
def test_usage_errors_exit_2(argv, capsys):
    assert run(*argv) == 2
    assert "usage" in capsys.readouterr().err


def test_help_exits_0(capsys):
    assert run("--help") == 0
    assert "sweep" in capsys.readouterr().out


# ------------------------------------------------------------------ sweep


def test_sweep_rows_sorted_by_gamma(tmp_path):
    cfg = tmp_path / "sw.cfg"
    cfg.write_text(SCOTT_SWEEP)
    out = tmp_path / "sw"
    assert run("sweep", cfg, "--jobs", 1, "--out", out) == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0] == "gamma,q,value,error_estimate,lower_bound,ell_max,n_max"
    assert [float(line.split(",")[0]) for line in lines[1:]] == [0.1, 0.3, 0.5]
    assert_manifest_complete(out)
    assert len(list((out / "tasks").glob("*.json"))) == 3


@pytest.mark.parametrize(
    "text",
    [
        "command = scott\ngamma =\n",
        "command = scott\n",
        "command = tf-energy\nZ = 10\ngamma = 0.5\n",
        "command = scott\ngamma = 0.5\nwobble = 1\n",
        "command = scott\ngamma = 0.5\nell_max = four\n",
        "command = melt\ngamma = 0.5\n",
        "gamma = 0.5\n",
        "command = scott\ngamma = a, b\n",
    ],
)
def test_sweep_bad_config_exits_2(tmp_path, text):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(text)
    assert run("sweep", cfg, "--out", tmp_path / "o") == 2
    assert not (tmp_path / "o").exists()


def test_sweep_without_config_exits_2(tmp_path):
    assert run("sweep", "--out", tmp_path / "o") == 2
    assert run("sweep", tmp_path / "missing.cfg") == 2


def test_sweep_over_two_axes(tmp_path):
    cfg = tmp_path / "e.cfg"
    cfg.write_text("command = expand-energy\nZ = 20, 10\ngamma = 0.5, 0.3\ns = 0.1\n")
    out = tmp_path / "e"
    assert run("sweep", "--config", cfg, "--jobs", 1, "--out", out) == 0
    rows = [line.split(",")[:2] for line in (out / "sweep.csv").read_text().splitlines()[1:]]
    assert rows == [["10.0", "0.3"], ["10.0", "0.5"], ["20.0", "0.3"], ["20.0", "0.5"]]


def test_sweep_is_independent_of_worker_count(tmp_path, monkeypatch):
    cfg = tmp_path / "sw.cfg"
    cfg.write_text(SCOTT_SWEEP)
    monkeypatch.setenv(cli.CACHE_ENV, str(tmp_path / "c1"))
    assert run("sweep", cfg, "--jobs", 1, "--out", tmp_path / "serial") == 0
    monkeypatch.setenv(cli.CACHE_ENV, str(tmp_path / "c2"))
    assert run("sweep", cfg, "--jobs", 2, "--out", tmp_path / "pool") == 0
    assert outputs_of(tmp_path / "serial") == outputs_of(tmp_path / "pool")


def test_interrupted_sweep_resumes_from_cache(tmp_path, monkeypatch):
    cfg = tmp_path / "sw.cfg"
    cfg.write_text(SCOTT_SWEEP)

    monkeypatch.setenv(cli.CACHE_ENV, str(tmp_path / "fresh"))
    assert run("sweep", cfg, "--jobs", 1, "--out", tmp_path / "straight") == 0

    # first attempt dies on the last grid point
    monkeypatch.setenv(cli.CACHE_ENV, str(tmp_path / "resumed"))
    original = cli.TASK_FUNCTIONS["scott"]

    def dies_at_half(**kw):
        if kw["gamma"] == 0.5:
            raise NumericalFailure("interrupted", {"gamma": 0.5})
        return original(**kw)

    monkeypatch.setitem(cli.TASK_FUNCTIONS, "scott", dies_at_half)
    out = tmp_path / "resumed-run"
    assert run("sweep", cfg, "--jobs", 1, "--out", out) == 3
    m = manifest_of(out)
    assert [f["params"]["gamma"] for f in m["failures"]] == [0.5]
    assert len((out / "sweep.csv").read_text().splitlines()) == 3
    assert_manifest_complete(out)

    # the rerun recomputes only the missing point
    monkeypatch.setitem(cli.TASK_FUNCTIONS, "scott", original)
    calls = []
    real_s_gamma = cli.s_gamma

    def counting(gamma, **kw):
        calls.append(gamma)
        return real_s_gamma(gamma, **kw)

    monkeypatch.setattr(cli, "s_gamma", counting)
    assert run("sweep", cfg, "--jobs", 1, "--out", out) == 0
    assert calls == [0.5]
    assert outputs_of(out) == outputs_of(tmp_path / "straight")
    a, b = manifest_of(out), manifest_of(tmp_path / "straight")
    a.pop("wall_time"), b.pop("wall_time")
    assert a == b


def test_identical_runs_are_byte_identical(tmp_path, monkeypatch):
    argv = [
        ["tf", "energy", "--Z", 30],
        ["spectrum", "--gamma", 0.5, "--ell", 1, "--n-count", 2],
        ["density", "mean-field", "--Z", 10],
    ]
    for k, cmd in enumerate(argv):
        runs = []
        for tag in ("x", "y"):
            monkeypatch.setenv(cli.CACHE_ENV, str(tmp_path / f"cache-{tag}"))
            out = tmp_path / f"{k}-{tag}"
            assert run(*cmd, "--out", out) == 0
            runs.append(out)
        assert outputs_of(runs[0]) == outputs_of(runs[1])
        ma, mb = manifest_of(runs[0]), manifest_of(runs[1])
        ma.pop("wall_time"), mb.pop("wall_time")
        assert ma == mb
