"""Command-line entry point: ``tfchandra <command> [options]``.

Every command writes its CSV/JSON results and a ``manifest.json`` into
``--out``. Expensive results (Thomas-Fermi solutions, channel spectra, s(gamma)
tables and mean-field densities) are cached under ``$TFCHANDRA_CACHE``, keyed
by operation, canonical parameters and tool version.

Exit codes: 0 success, 2 invalid arguments, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import itertools
import json
import math
import os
import shutil
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path

import numpy as np

from . import __version__
from .density import proxy_distances, solve_mean_field, weak_test
from .errors import InvalidArgument, NumericalFailure, TFChandraError
from .radial import (
    RadialDensity,
    ShellCharge,
    build_grid,
    coulomb_norm,
    coulomb_pair,
    read_density_csv,
    shell_pair,
)
from .scott import energy_expansion, s_gamma
from .spectral import chandrasekhar_levels, critical_coupling_probe, schrodinger_levels
from .thomas_fermi import TFSolution, load_tf_cache, save_tf_cache, solve_tf_screening, tf_energy

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3
CACHE_ENV = "TFCHANDRA_CACHE"
DEFAULT_TF_TOL = 1e-10
MANIFEST = "manifest.json"


# ------------------------------------------------------------- plumbing


def plain(obj):
    """Convert numpy scalars/arrays, tuples and non-string keys into JSON types."""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [plain(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def canonical(obj) -> str:
    return json.dumps(plain(obj), sort_keys=True, separators=(",", ":"))


def digest(obj) -> str:
    return hashlib.sha256(canonical(obj).encode()).hexdigest()


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def cell(v) -> str:
    """CSV text for one value; floats use the shortest round-trip form."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def cache_root() -> Path:
    env = os.environ.get(CACHE_ENV)
    return Path(env) if env else Path.home() / ".cache" / "tfchandra"


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def cached(kind: str, params: dict, compute):
    """Return the JSON payload for ``(kind, params)``, computing it at most once.

    Fresh and cached results both pass through a JSON round trip, so they are
    indistinguishable downstream.
    """
    key = digest({"op": kind, "params": params, "version": __version__})
    path = cache_root() / kind / f"{key}.json"
    if path.exists():
        return json.loads(path.read_text())["payload"]
    payload = json.loads(json.dumps(plain(compute())))
    record = {"op": kind, "params": plain(params), "version": __version__, "payload": payload}
    _atomic_write(path, json.dumps(record, sort_keys=True) + "\n")
    return payload


def load_tf(q: int = 2, tol: float = DEFAULT_TF_TOL) -> TFSolution:
    """Cached Thomas-Fermi solution for ``(q, tol)``."""
    where = cache_root() / "tf" / digest({"q": q, "tol": tol, "version": __version__})
    sol = load_tf_cache(where, tol=tol, q=q)
    if sol is not None:
        return sol
    sol = solve_tf_screening(tol=tol, q=q)
    where.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(dir=where.parent, prefix=".tmp-"))
    save_tf_cache(sol, staging)
    try:
        os.replace(staging, where)
    except OSError:  # another process got there first
        shutil.rmtree(staging, ignore_errors=True)
    # reload so that fresh and cached runs see the same decimal round trip
    return load_tf_cache(where, tol=tol, q=q) or sol


class RunOutputs:
    """Single writer for one output directory; tracks every emitted file."""

    def __init__(self, directory: str | Path):
        self.dir = Path(directory)
        self.files: list[Path] = []
        self.failures: list[dict] = []

    def _text(self, name: str, text: str) -> Path:
        path = self.dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(text)
        if path not in self.files:
            self.files.append(path)
        return path

    def json(self, name: str, obj) -> Path:
        return self._text(name, json.dumps(plain(obj), indent=2, sort_keys=True) + "\n")

    def csv(self, name: str, header: list[str], rows: list[dict]) -> Path:
        lines = [",".join(header)]
        lines += [",".join(cell(row.get(k)) for k in header) for row in rows]
        return self._text(name, "\n".join(lines) + "\n")

    def manifest(self, command: str, inputs: dict, started: float, **extra) -> Path:
        outputs = [
            {"path": p.relative_to(self.dir).as_posix(), "sha256": file_digest(p)}
            for p in sorted(self.files, key=lambda p: p.relative_to(self.dir).as_posix())
        ]
        record = {
            "command": command,
            "config_hash": digest({"command": command, "inputs": inputs}),
            "tool_version": __version__,
            "inputs": inputs,
            "outputs": outputs,
            "wall_time": time.perf_counter() - started,
            **extra,
        }
        path = self.dir / MANIFEST
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(plain(record), indent=2, sort_keys=True) + "\n")
        return path


def _tag(value: float) -> str:
    text = repr(float(value))
    return text[:-2] if text.endswith(".0") else text


def _error_record(exc: TFChandraError) -> dict:
    return {
        "class": type(exc).__name__,
        "message": str(exc),
        "diagnostics": plain(getattr(exc, "diagnostics", {})),
    }


# ------------------------------------------------- cached computations


def tf_energy_payload(Z: float, q: int = 2, tol: float = DEFAULT_TF_TOL) -> dict:
    e = tf_energy(load_tf(q, tol), Z)
    return {"Z": Z, "q": q, **plain(e.as_dict())}


def spectrum_payload(
    operator: str, gamma: float, ell: int, n_count: int, tol: float = 1e-9, one_sided: bool = False
) -> dict:
    params = {"operator": operator, "gamma": gamma, "ell": ell, "n_count": n_count, "tol": tol, "one_sided": one_sided}

    def compute():
        if operator == "schrodinger":
            result = schrodinger_levels(gamma, ell, n_count, tol=tol)
        elif operator == "chandrasekhar":
            result = chandrasekhar_levels(gamma, ell, n_count, tol=tol, one_sided=one_sided)
        else:
            raise InvalidArgument(f"unknown operator {operator!r}; use 'schrodinger' or 'chandrasekhar'")
        return {
            "rows": result.rows(),
            "disc": result.disc,
            "delta": result.delta,
            "exact": result.exact,
            "one_sided": result.one_sided,
            "level_delta": result.level_delta,
            "history": [{"size": size, "levels": levels} for size, levels in result.history],
        }

    return cached("spectrum", params, compute)


def scott_payload(gamma: float, q: int = 2, ell_max: int | None = None, n_max: int | None = None) -> dict:
    params = {"gamma": gamma, "q": q, "ell_max": ell_max, "n_max": n_max}

    def compute():
        res = s_gamma(gamma, q=q, ell_max=ell_max, n_max=n_max)
        return {"summary": res.as_dict(), "partial": res.partial_rows()}

    return cached("scott", params, compute)


def expansion_payload(
    Z: float, gamma: float, q: int = 2, s: float | None = None, ell_max: int | None = None, n_max: int | None = None
) -> dict:
    s_value = scott_payload(gamma, q, ell_max, n_max)["summary"]["value"] if s is None else s
    e = energy_expansion(Z, gamma, q, s_value, load_tf(q))
    return {
        "Z": Z,
        "gamma": gamma,
        "q": q,
        "s": s_value,
        "tf_energy": e.total - e.scott_term,
        "scott_term": e.scott_term,
        "total": e.total,
        "remainder": e.remainder,
    }


def probe_payload(gamma: float, refinements: int = 5, ell: int = 0) -> dict:
    rep = critical_coupling_probe(gamma, refinements, ell)
    return {
        "gamma": rep.gamma,
        "ell": ell,
        "verdict": rep.verdict,
        "limit_estimate": rep.limit_estimate,
        "steps": [
            {"step": k, "size": size, "momentum_cutoff": cut, "ground_state": e0}
            for k, (size, cut, e0) in enumerate(rep.ground_state_by_refinement)
        ],
    }


def mean_field_payload(Z: float, gamma: float = 0.5, kinetic: str = "chandrasekhar", q: int = 2) -> dict:
    params = {"Z": Z, "gamma": gamma, "kinetic": kinetic, "q": q}

    def compute():
        tf = load_tf(q)
        res = solve_mean_field(Z, gamma, kinetic=kinetic, q=q, tf=tf)
        d_hat, d_raw = proxy_distances(res.density, Z, tf)
        return {
            "Z": Z,
            "gamma": gamma,
            "kinetic": kinetic,
            "q": q,
            "label": res.label,
            "distance": d_hat,
            "unscaled_distance": d_raw,
            "charge": res.density.charge,
            "max_norm_defect": res.max_norm_defect,
            "disc": res.disc,
            "filling": res.filling.as_dict(),
            "r": res.density.grid.nodes,
            "rho": res.density.values,
        }

    return cached("mean-field", params, compute)


def _density_from_payload(p: dict) -> RadialDensity:
    r = np.array(p["r"])
    return RadialDensity(build_grid("log-uniform", r[0], r[-1], r.size), np.array(p["rho"]))


def _density_rows(p: dict) -> list[dict]:
    return [{"r": r, "rho": v} for r, v in zip(p["r"], p["rho"])]


def _mean_field_row(p: dict) -> dict:
    f = p["filling"]
    n, ell = f["last_filled"]["n"], f["last_filled"]["ell"]
    return {
        "Z": p["Z"],
        "gamma": p["gamma"],
        "kinetic": p["kinetic"],
        "distance": p["distance"],
        "unscaled_distance": p["unscaled_distance"],
        "fermi_energy": f["fermi_energy"],
        "last_n": n,
        "last_ell": ell,
        "fractional_occupancy": f["fractional_occupancy"],
    }


# ------------------------------------------------------------ scheduler


def _run_task(name: str, params: dict):
    """Worker body: never raises package errors, returns them as records."""
    try:
        return "ok", TASK_FUNCTIONS[name](**params)
    except TFChandraError as exc:
        return "failed", _error_record(exc)


def run_tasks(name: str, tasks: list[dict], jobs: int, on_result=None) -> list:
    """Run ``tasks`` (parameter dicts) and return outcomes in input order."""
    outcomes: list = [None] * len(tasks)
    jobs = max(1, min(jobs, len(tasks)))
    if jobs == 1:
        for i, params in enumerate(tasks):
            outcomes[i] = _run_task(name, params)
            if on_result:
                on_result(i, outcomes[i])
        return outcomes
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = {pool.submit(_run_task, name, params): i for i, params in enumerate(tasks)}
        for fut in as_completed(futures):
            i = futures[fut]
            outcomes[i] = fut.result()
            if on_result:
                on_result(i, outcomes[i])
    return outcomes


def default_jobs() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # pragma: no cover - non-Linux
        return os.cpu_count() or 1


# --------------------------------------------------------- sweep table


def _scott_rows(gamma, q=2, ell_max=None, n_max=None):
    s = scott_payload(gamma, q, ell_max, n_max)["summary"]
    return [
        {
            "gamma": s["gamma"],
            "q": s["q"],
            "value": s["value"],
            "error_estimate": s["error_estimate"],
            "lower_bound": s["lower_bound"],
            "ell_max": s["cutoffs"]["ell_max"],
            "n_max": s["cutoffs"]["n_max"],
        }
    ]


def _spectrum_rows(gamma, operator="chandrasekhar", ell=0, n_count=3, tol=1e-9, one_sided=False):
    return spectrum_payload(operator, gamma, ell, n_count, tol, one_sided)["rows"]


SWEEP_TASKS = {
    "scott": {
        "axes": ("gamma",),
        "options": {"q": int, "ell_max": int, "n_max": int},
        "run": _scott_rows,
        "header": ["gamma", "q", "value", "error_estimate", "lower_bound", "ell_max", "n_max"],
    },
    "expand-energy": {
        "axes": ("Z", "gamma"),
        "options": {"q": int, "s": float, "ell_max": int, "n_max": int},
        "run": lambda **kw: [expansion_payload(**kw)],
        "header": ["Z", "gamma", "q", "s", "tf_energy", "scott_term", "total"],
    },
    "tf-energy": {
        "axes": ("Z",),
        "options": {"q": int, "tol": float},
        "run": lambda **kw: [tf_energy_payload(**kw)],
        "header": ["Z", "q", "kinetic", "attraction", "repulsion", "total"],
    },
    "spectrum": {
        "axes": ("gamma",),
        "options": {"operator": str, "ell": int, "n_count": int, "tol": float},
        "run": _spectrum_rows,
        "header": ["operator", "gamma", "ell", "n", "eigenvalue", "resolution"],
    },
    "probe-critical": {
        "axes": ("gamma",),
        "options": {"refinements": int, "ell": int},
        "run": lambda **kw: [
            {k: v for k, v in probe_payload(**kw).items() if k != "steps"}
        ],
        "header": ["gamma", "ell", "verdict", "limit_estimate"],
    },
    "density-mean-field": {
        "axes": ("Z", "gamma"),
        "options": {"kinetic": str, "q": int},
        "run": lambda **kw: [_mean_field_row(mean_field_payload(**kw))],
        "header": [
            "Z",
            "gamma",
            "kinetic",
            "distance",
            "unscaled_distance",
            "fermi_energy",
            "last_n",
            "last_ell",
            "fractional_occupancy",
        ],
    },
}


def _float_list(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise InvalidArgument(f"expected a comma-separated list of numbers, got {text!r}") from None
    return values


def read_sweep_config(path: str | Path) -> dict:
    """Parse a ``key = value`` sweep file (an optional ``[sweep]`` header is allowed)."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InvalidArgument(f"cannot read config {path}: {exc}") from None
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.optionxform = str
    body = text if text.lstrip().startswith("[") else "[sweep]\n" + text
    try:
        parser.read_string(body)
    except configparser.Error as exc:
        raise InvalidArgument(f"malformed config {path}: {exc}") from None
    if not parser.has_section("sweep"):
        raise InvalidArgument(f"config {path} has no [sweep] section")
    raw = dict(parser.items("sweep"))
    command = raw.pop("command", "").strip()
    if command not in SWEEP_TASKS:
        raise InvalidArgument(f"sweep command must be one of {sorted(SWEEP_TASKS)}, got {command!r}")
    task = SWEEP_TASKS[command]
    grid = {axis: sorted(set(_float_list(raw.pop(axis, "")))) for axis in ("gamma", "Z")}
    jobs = raw.pop("jobs", None)
    options = {}
    for key, value in raw.items():
        kind = task["options"].get(key)
        if kind is None:
            raise InvalidArgument(f"option {key!r} is not understood by sweep command {command!r}")
        try:
            options[key] = kind(value.strip())
        except ValueError:
            raise InvalidArgument(f"option {key}={value!r} is not a valid {kind.__name__}") from None
    for axis in ("gamma", "Z"):
        if grid[axis] and axis not in task["axes"]:
            raise InvalidArgument(f"sweep command {command!r} takes no {axis} axis")
    if any(not grid[axis] for axis in task["axes"]):
        raise InvalidArgument(f"empty grid: {command!r} needs values for {', '.join(task['axes'])}")
    return {
        "command": command,
        "grid": {a: grid[a] for a in task["axes"]},
        "options": options,
        "jobs": None if jobs is None else int(jobs),
    }


def sweep(config: dict, out: Path, jobs: int | None) -> int:
    """Run a parsed sweep; returns the exit code."""
    started = time.perf_counter()
    task = SWEEP_TASKS[config["command"]]
    axes = list(config["grid"])
    tasks = [
        {**dict(zip(axes, point)), **config["options"]}
        for point in itertools.product(*(config["grid"][a] for a in axes))
    ]
    jobs = jobs or config["jobs"] or default_jobs()
    if "q" in config["options"] or config["command"] in ("expand-energy", "density-mean-field", "tf-energy"):
        # shared prerequisite, solved once before any worker starts
        load_tf(config["options"].get("q", 2), config["options"].get("tol", DEFAULT_TF_TOL))
    outputs = RunOutputs(out)
    names = [f"tasks/{k:04d}.json" for k in range(len(tasks))]

    def flush(i, outcome):
        status, body = outcome
        if status == "ok":
            outputs.json(names[i], {"params": tasks[i], "rows": body})
        print(f"task {i + 1}/{len(tasks)} {status}", file=sys.stderr)

    outcomes = run_tasks(config["command"], tasks, jobs, flush)
    rows, failures = [], []
    for params, (status, body) in zip(tasks, outcomes):
        if status == "ok":
            rows.extend(body)
        else:
            failures.append({"params": params, **body})
    outputs.csv("sweep.csv", task["header"], rows)
    inputs = {k: v for k, v in config.items() if k != "jobs"}
    outputs.manifest("sweep", inputs, started, failures=failures, status="failed" if failures else "ok")
    for f in failures:
        print(f"error: task {f['params']}: {f['message']}", file=sys.stderr)
    return EXIT_NUMERICAL if failures else EXIT_OK


# -------------------------------------------------------------- commands


def cmd_tf_solve(a, out: RunOutputs) -> dict | None:
    sol = load_tf(a.q, a.tol)
    csv_path, json_path = save_tf_cache(sol, out.dir)
    out.files += [csv_path, json_path]
    print(cell(sol.slope0))


def cmd_tf_energy(a, out: RunOutputs) -> dict | None:
    p = tf_energy_payload(a.Z, a.q, a.tol)
    out.json("energy.json", p)
    print(cell(p["total"]))


def cmd_coulomb_pair(a, out: RunOutputs) -> dict | None:
    inputs = {"density": _file_input(a.density), "other": _file_input(a.other)}
    v = coulomb_pair(read_density_csv(a.density), read_density_csv(a.other))
    out.json("pair.json", {"value": v.value, "estimated_quadrature_error": v.estimated_quadrature_error})
    print(cell(v.value))
    return inputs


def cmd_coulomb_norm(a, out: RunOutputs) -> dict | None:
    inputs = {"density": _file_input(a.density)}
    v = coulomb_norm(read_density_csv(a.density))
    out.json("norm.json", {"norm": v})
    print(cell(v))
    return inputs


def cmd_spectrum(a, out: RunOutputs) -> dict | None:
    p = spectrum_payload(a.operator, a.gamma, a.ell, a.n_count, a.tol, a.one_sided)
    out.csv("spectrum.csv", SWEEP_TASKS["spectrum"]["header"], p["rows"])
    out.json("spectrum.json", {k: v for k, v in p.items() if k != "rows"})
    for row in p["rows"]:
        print(f"n={row['n']} {cell(row['eigenvalue'])}")


def cmd_probe(a, out: RunOutputs) -> dict | None:
    p = probe_payload(a.gamma, a.refinements, a.ell)
    out.csv("probe.csv", ["step", "size", "momentum_cutoff", "ground_state"], p["steps"])
    out.json("probe.json", {k: v for k, v in p.items() if k != "steps"})
    print(p["verdict"])


def cmd_scott(a, out: RunOutputs) -> dict | None:
    p = scott_payload(a.gamma, a.q, a.ell_max, a.n_max)
    out.json("scott.json", p["summary"])
    out.csv("partial.csv", ["ell", "n", "difference"], p["partial"])
    s = p["summary"]
    bound = " (lower bound)" if s["lower_bound"] else ""
    print(f"{cell(s['value'])} +- {cell(s['error_estimate'])}{bound}")


def cmd_expand(a, out: RunOutputs) -> dict | None:
    p = expansion_payload(a.Z, a.gamma, a.q, a.s, a.ell_max, a.n_max)
    out.json("expansion.json", p)
    print(cell(p["total"]))


def cmd_mean_field(a, out: RunOutputs) -> dict | None:
    p = mean_field_payload(a.Z, a.gamma, a.kinetic, a.q)
    out.csv(f"density_Z{_tag(a.Z)}.csv", ["r", "rho"], _density_rows(p))
    out.json("mean_field.json", {k: v for k, v in p.items() if k not in ("r", "rho")})
    print(cell(p["distance"]))


def cmd_converge(a, out: RunOutputs) -> dict | None:
    zs = a.Z_list
    if len(zs) < 3 or any(b <= c for c, b in zip(zs, zs[1:])):
        raise InvalidArgument("--Z-list must be strictly ascending with at least 3 entries")
    tasks = [{"Z": z, "gamma": a.gamma, "kinetic": a.kinetic, "q": a.q} for z in zs]
    load_tf(a.q)
    outcomes = run_tasks("mean-field-payload", tasks, a.jobs or default_jobs())
    good = [body for status, body in outcomes if status == "ok"]
    failures = [{"params": t, **body} for t, (status, body) in zip(tasks, outcomes) if status != "ok"]
    slope = None
    if len(good) >= 2:
        slope = float(np.polyfit(np.log([p["Z"] for p in good]), np.log([p["distance"] for p in good]), 1)[0])
    rows = [
        {
            "Z": p["Z"],
            "gamma": p["gamma"],
            "distance": p["distance"],
            "unscaled_distance": p["unscaled_distance"],
            "fitted_exponent": slope,
        }
        for p in good
    ]
    out.csv("convergence.csv", ["Z", "gamma", "distance", "unscaled_distance", "fitted_exponent"], rows)
    for p in good:
        out.csv(f"density_Z{_tag(p['Z'])}.csv", ["r", "rho"], _density_rows(p))
    out.json(
        "convergence.json",
        {
            "label": good[0]["label"] if good else None,
            "fitted_exponent": slope,
            "records": [
                {k: p[k] for k in ("Z", "disc", "filling", "max_norm_defect", "charge", "label")} for p in good
            ],
            "failures": failures,
        },
    )
    for r in rows:
        print(f"Z={_tag(r['Z'])} {cell(r['distance'])}")
    out.failures = failures


def cmd_weak(a, out: RunOutputs) -> dict | None:
    if a.sigma is not None:
        inputs = {"sigma": _file_input(a.sigma)}
        sigma = read_density_csv(a.sigma)
        sigma_norm = coulomb_norm(sigma)
    elif a.shell_radius is not None:
        inputs = {}
        sigma = ShellCharge(a.shell_radius, a.shell_charge)
        sigma_norm = math.sqrt(shell_pair(sigma, sigma))
    else:
        raise InvalidArgument("give either --sigma FILE or --shell-radius R")
    p = mean_field_payload(a.Z, a.gamma, a.kinetic, a.q)
    rho = _density_from_payload(p)
    tf = load_tf(a.q)
    value = weak_test(sigma, a.Z, rho, tf)
    bound = sigma_norm * p["distance"]
    result = {"value": value, "schwarz_bound": bound, "test_norm": sigma_norm, "distance": p["distance"]}
    out.json("weak_test.json", result)
    print(f"{cell(value)} (|.| <= {cell(bound)})")
    return inputs


# everything the scheduler can run, by name (workers look functions up here)
TASK_FUNCTIONS = {name: task["run"] for name, task in SWEEP_TASKS.items()}
TASK_FUNCTIONS["mean-field-payload"] = mean_field_payload


def _file_input(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise InvalidArgument(f"no such file: {path}")
    return {"name": p.name, "sha256": file_digest(p)}


# --------------------------------------------------------------- parser


def _z_list(text: str) -> list[float]:
    try:
        return _float_list(text)
    except InvalidArgument as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (default runs/<command>)")
    common.add_argument("--jobs", type=int, help="worker processes (default: available CPUs)")
    common.add_argument("--config", help="key = value file supplying defaults for the options")

    parser = argparse.ArgumentParser(prog="tfchandra", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"tfchandra {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    def leaf(group, name, func, help_text, **kw):
        p = group.add_parser(name, parents=[common], help=help_text, description=help_text, **kw)
        p.set_defaults(func=func)
        return p

    tf = sub.add_parser("tf", help="Thomas-Fermi screening function and energies")
    tf_sub = tf.add_subparsers(dest="action", metavar="action", required=True)
    p = leaf(tf_sub, "solve", cmd_tf_solve, "solve the screening equation; writes phi.csv and phi.json")
    p.add_argument("--tol", type=float, default=DEFAULT_TF_TOL)
    p.add_argument("--q", type=int, default=2)
    p = leaf(tf_sub, "energy", cmd_tf_energy, "Thomas-Fermi energy components of a neutral atom")
    p.add_argument("--Z", type=float, required=True)
    p.add_argument("--q", type=int, default=2)
    p.add_argument("--tol", type=float, default=DEFAULT_TF_TOL)

    co = sub.add_parser("coulomb", help="Coulomb pairings of radial densities")
    co_sub = co.add_subparsers(dest="action", metavar="action", required=True)
    p = leaf(co_sub, "pair", cmd_coulomb_pair, "D(rho, sigma) for two r,rho CSV files")
    p.add_argument("--density", required=True)
    p.add_argument("--other", required=True)
    p = leaf(co_sub, "norm", cmd_coulomb_norm, "Coulomb norm of an r,rho CSV file")
    p.add_argument("--density", required=True)

    p = leaf(sub, "spectrum", cmd_spectrum, "bound levels of one angular momentum channel")
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--operator", choices=["chandrasekhar", "schrodinger"], default="chandrasekhar")
    p.add_argument("--ell", type=int, default=0)
    p.add_argument("--n-count", type=int, default=3)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--one-sided", action="store_true", help="skip the momentum-cutoff extrapolation")

    p = leaf(sub, "probe-critical", cmd_probe, "watch the ground state under basis refinement")
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--refinements", type=int, default=5)
    p.add_argument("--ell", type=int, default=0)

    p = leaf(sub, "scott", cmd_scott, "relativistic Scott coefficient s(gamma)")
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--q", type=int, default=2)
    p.add_argument("--ell-max", type=int)
    p.add_argument("--n-max", type=int)

    p = leaf(sub, "expand-energy", cmd_expand, "two-term energy expansion E_TF(Z) + (q/4 - s) Z^2")
    p.add_argument("--Z", type=float, required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--q", type=int, default=2)
    p.add_argument("--s", type=float, help="use this s(gamma) instead of computing it")
    p.add_argument("--ell-max", type=int)
    p.add_argument("--n-max", type=int)

    de = sub.add_parser("density", help="mean-field density experiment")
    de_sub = de.add_subparsers(dest="action", metavar="action", required=True)

    def density_options(p):
        p.add_argument("--gamma", type=float, default=0.5)
        p.add_argument("--kinetic", choices=["chandrasekhar", "schrodinger"], default="chandrasekhar")
        p.add_argument("--q", type=int, default=2)

    p = leaf(de_sub, "mean-field", cmd_mean_field, "proxy density in the Thomas-Fermi potential")
    p.add_argument("--Z", type=float, required=True)
    density_options(p)
    p = leaf(de_sub, "converge", cmd_converge, "distance of the rescaled proxy to the TF density along Z")
    p.add_argument("--Z-list", type=_z_list, default=[10.0, 20.0, 40.0, 80.0], help="comma-separated")
    density_options(p)
    p = leaf(de_sub, "weak-test", cmd_weak, "pair the density error with a test charge")
    p.add_argument("--Z", type=float, required=True)
    p.add_argument("--sigma", help="test density as an r,rho CSV file")
    p.add_argument("--shell-radius", type=float, help="use a uniform shell of this radius")
    p.add_argument("--shell-charge", type=float, default=1.0)
    density_options(p)

    p = sub.add_parser("sweep", parents=[common], help="run a parameter grid from a config file")
    p.add_argument("config_file", nargs="?", help="sweep config (same as --config)")
    p.set_defaults(func=None)
    return parser


def _config_tokens(path: str) -> list[str]:
    """Turn a ``key = value`` file into ``--key value`` tokens."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InvalidArgument(f"cannot read config {path}: {exc}") from None
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.optionxform = str
    body = text if text.lstrip().startswith("[") else "[options]\n" + text
    try:
        parser.read_string(body)
    except configparser.Error as exc:
        raise InvalidArgument(f"malformed config {path}: {exc}") from None
    tokens = []
    for section in parser.sections():
        for key, value in parser.items(section):
            flag = "--" + key.replace("_", "-")
            value = value.strip()
            if value.lower() in ("true", "yes", "on"):
                tokens.append(flag)
            elif value.lower() not in ("false", "no", "off"):
                tokens += [flag, value]
    return tokens


def _command_words(args) -> list[str]:
    return [w for w in (args.command, getattr(args, "action", None)) if w]


def _with_config(argv: list[str]) -> list[str]:
    """Splice ``--config`` values in right after the command words.

    They precede the explicit flags, so explicit flags win.
    """
    if not argv or argv[0] == "sweep":
        return argv
    path = None
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif tok.startswith("--config="):
            path = tok.split("=", 1)[1]
    if path is None:
        return argv
    words = 2 if argv[0] in ("tf", "coulomb", "density") else 1
    return argv[:words] + _config_tokens(path) + argv[words:]


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(_with_config(argv))
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    except InvalidArgument as exc:
        print(f"tfchandra: invalid argument: {exc}", file=sys.stderr)
        return EXIT_INVALID
    words = _command_words(args)
    name = " ".join(words)
    try:
        if args.command == "sweep":
            config_file = args.config_file or args.config
            if not config_file:
                raise InvalidArgument("sweep needs a config file")
            config = read_sweep_config(config_file)
            out = Path(args.out or "runs/sweep")
            return sweep(config, out, args.jobs)
        out = RunOutputs(args.out or Path("runs") / "-".join(words))
        started = time.perf_counter()
        try:
            inputs = {**_echo(args), **(args.func(args, out) or {})}
        except NumericalFailure as exc:
            out.manifest(name, _echo(args), started, status="failed", error=_error_record(exc))
            raise
        failures = out.failures
        out.manifest(name, inputs, started, status="failed" if failures else "ok", failures=failures)
        if failures:
            for f in failures:
                print(f"error: {f['params']}: {f['message']}", file=sys.stderr)
            return EXIT_NUMERICAL
        return EXIT_OK
    except InvalidArgument as exc:
        print(f"tfchandra {name}: invalid argument: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalFailure as exc:
        print(f"tfchandra {name}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def _echo(args) -> dict:
    skip = {"func", "out", "jobs", "config", "command", "action"}
    return {k: v for k, v in vars(args).items() if k not in skip}


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
