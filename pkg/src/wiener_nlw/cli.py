"""Configuration-driven experiment runner.

    wiener-nlw run CONFIG [--validate-only] [--threads N] [--output-dir DIR]
    wiener-nlw describe CONFIG

Exit codes: 0 success, 1 configuration error, 2 runtime error.  Errors are
reported as one JSON object on stderr.  ``WIENER_NLW_OUTPUT_DIR`` overrides
the configured output directory (``--output-dir`` wins over both).
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import os
import platform
import sys
import tempfile
from dataclasses import dataclass, field as dc_field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml

from .experiments import (
    FULL,
    PERTURBED_COLUMNS,
    DegenerateEnsemble,
    EnsembleSpec,
    ExperimentFailure,
    ReferenceTooCoarse,
    exceptional_set_probe,
    perturbed_ensemble,
    solver_validation,
    strichartz_tail,
    sup_tail,
    truncation_convergence,
    uniform_energy,
)
from .grid import GridSpec, InvalidParameter, make_grid
from .norms import NORM_CSV_COLUMNS
from .propagator import PropagatorKind
from .randomization import DistributionKind
from .solver import SolverConfig

OUTPUT_ENV = "WIENER_NLW_OUTPUT_DIR"
SCHEMA_VERSION = "v1"
EXPERIMENTS = ("tail", "sup-tail", "uniform-energy", "convergence", "exceptional-set",
               "solver-validate")

PARAM_DEFAULTS = {
    "tail": {"q": 5, "r": 10, "interval": [0.0, 1.0], "short_fraction": 0.25, "n_times": 65},
    "sup-tail": {"r": 6, "T": [1.0], "depth": 10, "kinds": ["full-wave-S"]},
    "uniform-energy": {"N": [4, 8, 16, "full"], "T": 1.0},
    "convergence": {"N": [2, 4, 8, 16], "T": 1.0, "alpha": 0.75},
    "exceptional-set": {"T": 1.0, "K": 1.0, "theta": 0.1, "tau_star": 0.25,
                        "thresholds": [0.5, 1.0, 2.0, 4.0], "alpha": 0.0, "n_times": 65,
                        "solve_good": False},
    "solver-validate": {"T": 0.5},
}

PROBES = {
    "tail": "sub-Gaussian tail of the space-time Strichartz norm of the randomised free wave, "
            "and its scaling with the interval length",
    "sup-tail": "sub-Gaussian tail of the time supremum of the randomised free wave in L^r",
    "uniform-energy": "bound on the energy of the nonlinear remainder that is uniform in the "
                      "frequency truncation N",
    "convergence": "convergence rate in N of the truncated free waves and nonlinear remainders",
    "exceptional-set": "probability of the exceptional set where the forcing bounds fail",
    "solver-validate": "energy conservation, split consistency and linear-limit exactness of the solver",
}


class ConfigInvalid(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


# ----------------------------------------------------------------------
# Configuration
# ----------------------------------------------------------------------
@dataclass
class ExperimentConfig:
    experiment: str
    grid: dict
    ensemble: dict
    solver: dict = dc_field(default_factory=lambda: {"dt": 0.01})
    params: dict = dc_field(default_factory=dict)
    output_dir: str = "wiener_nlw_output"
    seed: int = 0
    threads: int = 1

    # -- serialisation --------------------------------------------------
    @classmethod
    def from_dict(cls, doc) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigInvalid("<root>", "config must be a mapping")
        known = {"experiment", "grid", "ensemble", "solver", "params", "output_dir", "seed", "threads"}
        extra = sorted(set(doc) - known)
        if extra:
            raise ConfigInvalid(extra[0], "unknown field")
        for key in ("experiment", "grid", "ensemble"):
            if key not in doc:
                raise ConfigInvalid(key, "missing required field")
        exp = doc["experiment"]
        if exp not in EXPERIMENTS:
            raise ConfigInvalid("experiment", f"unknown experiment tag {exp!r}; expected one of {list(EXPERIMENTS)}")
        params = dict(PARAM_DEFAULTS[exp])
        given = doc.get("params") or {}
        if not isinstance(given, dict):
            raise ConfigInvalid("params", "must be a mapping")
        for k in given:
            if k not in params:
                raise ConfigInvalid(f"params.{k}", f"unknown parameter for {exp}")
        params.update(given)
        cfg = cls(exp, dict(doc["grid"]), dict(doc["ensemble"]), dict(doc.get("solver") or {"dt": 0.01}),
                  params, str(doc.get("output_dir", "wiener_nlw_output")), int(doc.get("seed", 0)),
                  int(doc.get("threads", 1)))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigInvalid("<file>", str(exc)) from exc
        try:
            doc = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigInvalid("<file>", f"unparseable: {exc}") from exc
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return {"experiment": self.experiment, "grid": copy.deepcopy(self.grid),
                "ensemble": copy.deepcopy(self.ensemble), "solver": copy.deepcopy(self.solver),
                "params": copy.deepcopy(self.params), "output_dir": self.output_dir,
                "seed": self.seed, "threads": self.threads}

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def canonical(self) -> str:
        """Sorted-key JSON with numbers normalised; thread count and output dir excluded."""
        doc = self.to_dict()
        doc.pop("threads")
        doc.pop("output_dir")
        return json.dumps(_normalise(doc), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    # -- validation and resolution --------------------------------------
    def make_grid(self) -> GridSpec:
        g = self.grid
        try:
            return make_grid(int(_need(g, "dim", "grid")), int(_need(g, "points_per_axis", "grid")),
                             float(_need(g, "box_length", "grid")),
                             float(g.get("dealias_ratio", 3.0 if int(g["dim"]) <= 2 else 2.0)))
        except ConfigInvalid:
            raise
        except (InvalidParameter, TypeError, ValueError) as exc:
            raise ConfigInvalid("grid", str(exc)) from exc

    def make_solver(self) -> SolverConfig:
        s = self.solver
        try:
            return SolverConfig(float(_need(s, "dt", "solver")), s.get("scheme", "integrating-factor-rk4"),
                                int(s.get("snapshot_stride", 1)), True, s.get("spectral_filter"))
        except ConfigInvalid:
            raise
        except (InvalidParameter, TypeError, ValueError) as exc:
            raise ConfigInvalid("solver", str(exc)) from exc

    def make_ensemble(self) -> EnsembleSpec:
        e = self.ensemble
        base = e.get("base")
        if not isinstance(base, dict):
            raise ConfigInvalid("ensemble.base", "must be a mapping with a 'kind'")
        try:
            dist = DistributionKind(e.get("distribution", "standard-gaussian-complex"))
        except ValueError as exc:
            raise ConfigInvalid("ensemble.distribution", str(exc)) from exc
        cutoff = e.get("cutoff", "smooth-psi")
        if cutoff not in ("smooth-psi", "sharp-indicator"):
            raise ConfigInvalid("ensemble.cutoff", f"unknown cutoff {cutoff!r}")
        try:
            return EnsembleSpec(self.make_grid(), dict(base), dist, int(_need(e, "members", "ensemble")),
                                int(self.seed), cutoff)
        except InvalidParameter as exc:
            raise ConfigInvalid("ensemble", str(exc)) from exc

    def validate(self) -> None:
        grid = self.make_grid()
        spec = self.make_ensemble()
        if self.threads < 1:
            raise ConfigInvalid("threads", "must be >= 1")
        p = self.params
        solver = self.make_solver()
        if self.experiment in ("uniform-energy", "convergence", "solver-validate") \
                or (self.experiment == "exceptional-set" and p.get("solve_good")):
            try:
                solver.check_grid(grid)
            except InvalidParameter as exc:
                raise ConfigInvalid("solver.dt", str(exc)) from exc
        kind = spec.base.get("kind")
        if kind not in ("rough", "gaussian-bump", "single-cube", "band-limited", "zero"):
            raise ConfigInvalid("ensemble.base.kind", f"unknown base kind {kind!r}")
        if kind == "rough" and not 0 < float(spec.base.get("s", -1)) < 1:
            raise ConfigInvalid("ensemble.base.s", "rough data needs 0 < s < 1")
        if self.experiment == "tail":
            if spec.members < 100:
                raise ConfigInvalid("ensemble.members", "tail fits need at least 100 members")
            if not (math.isfinite(float(p["q"])) and math.isfinite(float(p["r"]))):
                raise ConfigInvalid("params.q", "tail needs finite q and r")
            a, b = map(float, p["interval"])
            if not 0 < b - a <= 10:
                raise ConfigInvalid("params.interval", "length must lie in (0, 10]")
        if self.experiment == "sup-tail":
            if int(p["depth"]) > 14:
                raise ConfigInvalid("params.depth", "must be <= 14")
            for k in p["kinds"]:
                if k not in (PropagatorKind.FULL_WAVE.value, PropagatorKind.TILDE.value):
                    raise ConfigInvalid("params.kinds", f"unsupported propagator {k!r}")
        if self.experiment in ("uniform-energy", "convergence"):
            Ns = p["N"]
            if not isinstance(Ns, list) or not Ns:
                raise ConfigInvalid("params.N", "must be a non-empty list")
            for N in Ns:
                if N == FULL:
                    if self.experiment == "convergence":
                        raise ConfigInvalid("params.N", "the full-band reference is implicit in convergence")
                    continue
                if not isinstance(N, int) or N < 1 or N & (N - 1):
                    raise ConfigInvalid("params.N", f"{N!r} is not a dyadic integer")
                if N > grid.band_limit:
                    raise ConfigInvalid("params.N", f"N={N} exceeds the grid band limit {grid.band_limit:.4g}")
            if self.experiment == "convergence" and grid.band_limit < 2 * max(Ns):
                raise ConfigInvalid("params.N", f"grid band limit {grid.band_limit:.4g} must be at least "
                                                f"2 * max(N) = {2 * max(Ns)}")
            if self.experiment == "uniform-energy" and kind == "rough" \
                    and not 0.5 < float(spec.base["s"]) < 1:
                raise ConfigInvalid("ensemble.base.s", "uniform-energy needs 1/2 < s < 1")
        if self.experiment == "exceptional-set":
            for key in ("K", "theta", "tau_star"):
                if not float(p[key]) > 0:
                    raise ConfigInvalid(f"params.{key}", "must be positive")


def _need(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigInvalid(f"{where}.{key}", "missing required field")
    return d[key]


def _normalise(x):
    if isinstance(x, bool) or x is None or isinstance(x, str):
        return x
    if isinstance(x, (int, float)):
        return repr(float(x))
    if isinstance(x, dict):
        return {str(k): _normalise(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_normalise(v) for v in x]
    return str(x)


# ----------------------------------------------------------------------
# Planning
# ----------------------------------------------------------------------
def plan(cfg: ExperimentConfig) -> dict:
    grid = cfg.make_grid()
    spec = cfg.make_ensemble()
    p = cfg.params
    points = int(np.prod(grid.shape))
    padded = grid.padded_points ** grid.dim
    M = spec.members
    out = {"experiment": cfg.experiment, "probes": PROBES[cfg.experiment], "members": M,
           "grid_points": points, "config_hash": cfg.hash()}
    if cfg.experiment in ("uniform-energy", "convergence", "solver-validate"):
        solver = cfg.make_solver()
        T = float(p["T"])
        steps = max(1, math.ceil(T / solver.dt - 1e-9))
        if cfg.experiment == "uniform-energy":
            solves = M * len(p["N"])
        elif cfg.experiment == "convergence":
            solves = M * (len(p["N"]) + 1) + 2
        else:
            solves = 3
        out.update(perturbed_solves=solves, steps_per_solve=steps,
                   per_member_cost=points * steps * (solves // max(M, 1) or 1),
                   fft_estimate=solves * steps * 8, padded_points=padded)
    elif cfg.experiment == "tail":
        n = int(p["n_times"])
        out.update(per_member_cost=2 * n * points, fft_estimate=2 * n * M)
    elif cfg.experiment == "sup-tail":
        n = 2 ** int(p["depth"]) + 1
        evals = n * len(p["T"]) * len(p["kinds"])
        out.update(per_member_cost=evals * points, fft_estimate=evals * M)
    elif cfg.experiment == "exceptional-set":
        n = int(p["n_times"])
        out.update(per_member_cost=2 * n * points, fft_estimate=2 * n * M)
    return out


def describe_text(cfg: ExperimentConfig) -> str:
    pl = plan(cfg)
    lines = [f"experiment      : {pl['experiment']}",
             f"probes          : {pl['probes']}",
             f"members         : {pl['members']}",
             f"grid points     : {pl['grid_points']}"]
    if "perturbed_solves" in pl:
        lines += [f"perturbed solves: {pl['perturbed_solves']}",
                  f"steps per solve : {pl['steps_per_solve']}",
                  f"padded points   : {pl['padded_points']}"]
    lines += [f"per-member cost : {pl['per_member_cost']} (grid points x evaluations)",
              f"FFT estimate    : {pl['fft_estimate']}",
              f"config hash     : {pl['config_hash']}"]
    return "\n".join(lines)


# ----------------------------------------------------------------------
# Output
# ----------------------------------------------------------------------
def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    return str(x)


class OutputWriter:
    """Writes payload files carrying the schema and config hash in their header."""

    def __init__(self, directory: Path, config_hash: str):
        self.dir = directory
        self.hash = config_hash
        self.files: list[str] = []

    def _write(self, name: str, text: str) -> None:
        path = self.dir / name
        _atomic_write(path, text)
        self.files.append(name)

    def csv(self, name: str, table: str, columns, rows) -> None:
        buf = io.StringIO()
        buf.write(f"# schema: wiener-nlw/{table}/{SCHEMA_VERSION}\n")
        buf.write(f"# config_hash: {self.hash}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(x) for x in r])
        self._write(name, buf.getvalue())

    def dat(self, name: str, table: str, columns, rows) -> None:
        lines = [f"# schema: wiener-nlw/{table}/{SCHEMA_VERSION}", f"# config_hash: {self.hash}",
                 "# columns: " + " ".join(columns)]
        lines += [" ".join(_cell(x) for x in r) for r in rows]
        self._write(name, "\n".join(lines) + "\n")

    def json(self, name: str, doc: dict) -> None:
        doc = {"schema": f"wiener-nlw/summary/{SCHEMA_VERSION}", "config_hash": self.hash, **doc}
        self._write(name, json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ----------------------------------------------------------------------
# Execution
# ----------------------------------------------------------------------
def execute(cfg: ExperimentConfig, out: OutputWriter, threads: int) -> int:
    """Run the configured experiment; returns the aborted-sample count."""
    spec = cfg.make_ensemble()
    p = cfg.params
    exp = cfg.experiment
    base_summary = {"experiment": exp, "seed": cfg.seed, "ensemble": spec.describe()}
    if exp == "tail":
        rep = strichartz_tail(spec, float(p["q"]), float(p["r"]), tuple(map(float, p["interval"])),
                              float(p["short_fraction"]), int(p["n_times"]), threads)
        out.csv("tail_norms.csv", "spacetime-norm", NORM_CSV_COLUMNS, rep.rows())
        out.dat("tail_curve.dat", "tail-curve", ("lambda", "log_P"), rep.curve.plot_rows())
        out.dat("tail_curve_short.dat", "tail-curve", ("lambda", "log_P"), rep.short_curve.plot_rows())
        out.json("summary.json", {**base_summary, **rep.summary()})
        return 0
    if exp == "sup-tail":
        rep = sup_tail(spec, float(p["r"]), [float(t) for t in p["T"]], int(p["depth"]), p["kinds"], threads)
        out.csv("sup_tail.csv", "time-sup", ("sample_id", "propagator", "T", "r", "depth", "value"),
                rep.rows())
        for (kind, T), curve in sorted(rep.curves.items()):
            out.dat(f"sup_curve_{kind}_T{T:g}.dat", "tail-curve", ("lambda", "log_P"), curve.plot_rows())
        out.json("summary.json", {**base_summary, **rep.summary()})
        return 0
    if exp == "uniform-energy":
        env, ens = uniform_energy(spec, p["N"], float(p["T"]), cfg.make_solver(), threads)
        out.csv("perturbed.csv", "perturbed", PERTURBED_COLUMNS, ens.rows())
        rows = [(_n_plot(n), env.quantiles[n]["median"], env.quantiles[n]["q90"], env.quantiles[n]["max"])
                for n in env.Ns]
        out.dat("energy_envelope.dat", "energy-envelope", ("N", "median", "q90", "max"), rows)
        out.json("summary.json", {**base_summary, **env.summary()})
        return len(ens.aborted)
    if exp == "convergence":
        solver = cfg.make_solver()
        ens = perturbed_ensemble(spec, p["N"], float(p["T"]), solver, omega=False, threads=threads)
        rep = truncation_convergence(spec, p["N"], float(p["T"]), solver, float(p["alpha"]), ensemble=ens)
        out.csv("perturbed.csv", "perturbed", PERTURBED_COLUMNS, ens.rows())
        out.dat("convergence.dat", "convergence", ("N", "median_z_diff", "median_v_diff"), rep.plot_rows())
        out.json("summary.json", {**base_summary, **rep.summary(), "aborted": ens.aborted})
        return len(ens.aborted)
    if exp == "exceptional-set":
        good = cfg.make_solver() if p.get("solve_good") else None
        rep = exceptional_set_probe(spec, float(p["T"]), float(p["K"]), float(p["theta"]),
                                    float(p["tau_star"]), p["thresholds"], float(p["alpha"]),
                                    int(p["n_times"]), good, threads=threads)
        out.csv("exceptional.csv", "exceptional-set", ("sample_id", "bessel_L5L10", "smallness_ok"),
                rep.rows())
        out.dat("epsilon_curve.dat", "epsilon-curve", ("threshold", "violation_fraction"),
                rep.epsilon_curve())
        out.json("summary.json", {**base_summary, **rep.summary()})
        return len(rep.good_aborted)
    if exp == "solver-validate":
        checks = solver_validation(spec, float(p["T"]), cfg.make_solver())
        out.csv("solver_validate.csv", "solver-checks", ("check", "value", "tolerance", "passed"),
                [c.row() for c in checks])
        out.json("summary.json", {**base_summary, "checks": {c.name: c.value for c in checks}})
        return 0
    raise ConfigInvalid("experiment", f"unknown experiment tag {exp!r}")


def _n_plot(n: str):
    return n if n != FULL else "inf"


def _tool_version() -> str:
    try:
        from importlib.metadata import version
        return version("artifact")
    except Exception:
        from . import __version__
        return __version__


def run(cfg: ExperimentConfig, output_dir: Path, threads: int) -> dict:
    output_dir.mkdir(parents=True, exist_ok=True)
    manifest = output_dir / "manifest.json"
    if manifest.exists():
        manifest.unlink()  # a stale manifest must not vouch for new partial outputs
    start = datetime.now(timezone.utc).isoformat()
    writer = OutputWriter(output_dir, cfg.hash())
    _atomic_write(output_dir / "config.yaml", cfg.dump())
    aborted = execute(cfg, writer, threads)
    grid = cfg.make_grid()
    filt = cfg.make_solver().filter_enabled(grid)
    doc = {
        "config_hash": cfg.hash(),
        "tool_version": _tool_version(),
        "start": start,
        "end": datetime.now(timezone.utc).isoformat(),
        "outputs": sorted(writer.files),
        "aborted_samples": aborted,
        "environment": {"threads": threads, "dealias_ratio": grid.dealias_ratio,
                        "spectral_filter": filt, "python": platform.python_version(),
                        "numpy": np.__version__},
    }
    _atomic_write(manifest, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return doc


def _error(kind: str, message: str, code: int, **extra) -> int:
    print(json.dumps({"error": kind, "message": message, **extra}, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="wiener-nlw", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the experiment described by a config file")
    r.add_argument("config")
    r.add_argument("--validate-only", action="store_true", help="check the config and exit")
    r.add_argument("--threads", type=int, default=None)
    r.add_argument("--output-dir", default=None)
    d = sub.add_parser("describe", help="print the resolved plan for a config file")
    d.add_argument("config")
    args = ap.parse_args(argv)

    try:
        cfg = ExperimentConfig.load(args.config)
    except ConfigInvalid as exc:
        return _error("config-invalid", exc.message, 1, field=exc.path)

    if args.command == "describe":
        print(describe_text(cfg))
        return 0

    threads = args.threads if args.threads is not None else cfg.threads
    if threads < 1:
        return _error("config-invalid", "must be >= 1", 1, field="threads")
    if args.validate_only:
        return 0
    out_dir = Path(args.output_dir or os.environ.get(OUTPUT_ENV) or cfg.output_dir)
    try:
        doc = run(cfg, out_dir, threads)
    except ConfigInvalid as exc:
        return _error("config-invalid", exc.message, 1, field=exc.path)
    except OSError as exc:
        return _error("io-failure", str(exc), 2)
    except (ExperimentFailure, DegenerateEnsemble, ReferenceTooCoarse, InvalidParameter,
            FloatingPointError) as exc:
        return _error("experiment-failure", str(exc), 2,
                      sample_ids=getattr(exc, "sample_ids", []))
    print(json.dumps({"status": "ok", "output_dir": str(out_dir), "outputs": doc["outputs"],
                      "aborted_samples": doc["aborted_samples"]}, sort_keys=True))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
