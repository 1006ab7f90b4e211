"""Experiment harness: repeated runs, empirical FDP/TPP, parameter sweeps.

Every run regenerates a dataset, draws D knockoffs once, and evaluates all
enabled selectors on those identical draws, so method comparisons share
randomness within a run. Sweeps parallelize over runs with pre-spawned
streams, which keeps reports bit-identical for a given master seed no matter
how many workers execute them.
"""
from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError
from .knockoffs import model_from_covariance, toeplitz_correlation
from .pipeline import (
    RunConfig,
    calibrations_for_selectors,
    compute_draw_statistics,
    evaluate_selector,
)
from .rng import split, stream
from .simgen import SimConfig, SimulatedDataset, simulate_with_streams

SWEEP_PARAMS = ("n", "p", "rho", "sparsity", "snr")


def coverage_band_half_width(alpha: float, n_runs: int) -> float:
    """2 * sqrt(alpha (1 - alpha) / N): the binomial band around alpha."""
    return 2.0 * math.sqrt(alpha * (1.0 - alpha) / n_runs)


@dataclass
class RunMetrics:
    """Outcome of one selector on one run; tpp is None under a global null."""

    run_id: int
    method: str
    fdp: float
    tpp: float | None
    selected_size: int
    wall_time: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "method": self.method,
            "fdp": self.fdp,
            "tpp": self.tpp,
            "selected_size": self.selected_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunMetrics":
        return cls(
            run_id=int(d["run_id"]),
            method=d["method"],
            fdp=float(d["fdp"]),
            tpp=None if d["tpp"] is None else float(d["tpp"]),
            selected_size=int(d["selected_size"]),
        )


def metrics_for_selection(
    run_id: int,
    method: str,
    selected,
    support,
    wall_time: float = 0.0,
) -> RunMetrics:
    chosen = set(int(i) for i in selected)
    truth = set(int(i) for i in support)
    fdp = len(chosen - truth) / max(1, len(chosen))
    tpp = len(chosen & truth) / len(truth) if truth else None
    return RunMetrics(
        run_id=run_id,
        method=method,
        fdp=fdp,
        tpp=tpp,
        selected_size=len(chosen),
        wall_time=wall_time,
    )


def run_once(
    sim_config: SimConfig,
    cfg: RunConfig,
    rng: np.random.Generator,
    run_id: int = 0,
    calibrations=None,
    dataset: SimulatedDataset | None = None,
    extra_selectors=None,
    cache_dir=None,
) -> list[RunMetrics]:
    """One dataset, one draw loop, every selector evaluated on the same draws.

    ``dataset`` overrides generation (e.g. a global-null dataset built by the
    caller); ``extra_selectors`` maps method names to callables
    ``(dataset, stats, cfg) -> SelectionResult`` consulted before the
    built-in selectors. Calibrations are data-independent, so the caller
    usually computes them once and passes them in. With
    ``cfg.oracle_covariance`` the knockoff sampler receives the simulation's
    known AR(1) covariance instead of estimating it from the draw.
    """
    data_rng, stats_rng, seed_rng = split(rng, 3)
    if dataset is None:
        dataset = simulate_with_streams(sim_config, data_rng)
    model = None
    if cfg.oracle_covariance and cfg.knockoff_method == "gaussian":
        model = model_from_covariance(
            toeplitz_correlation(dataset.p, sim_config.rho)
        )
    stats = compute_draw_statistics(
        dataset.design, dataset.response, cfg, stats_rng, model=model
    )
    if calibrations is None:
        calib_seed = int(seed_rng.integers(2**62))
        calibrations = calibrations_for_selectors(
            dataset.p, cfg, calib_seed, cache_dir=cache_dir
        )
    out = []
    for name in cfg.methods:
        start = time.perf_counter()
        if extra_selectors and name in extra_selectors:
            selection = extra_selectors[name](dataset, stats, cfg)
        else:
            selection = evaluate_selector(name, stats, cfg, calibrations)
        elapsed = time.perf_counter() - start
        out.append(
            metrics_for_selection(
                run_id, name, selection.selected, dataset.support, wall_time=elapsed
            )
        )
    return out


@dataclass
class SweepPoint:
    value: float
    runs: list[RunMetrics]

    def to_dict(self) -> dict:
        return {"value": self.value, "runs": [r.to_dict() for r in self.runs]}

    @classmethod
    def from_dict(cls, d: dict) -> "SweepPoint":
        return cls(
            value=float(d["value"]),
            runs=[RunMetrics.from_dict(r) for r in d["runs"]],
        )


@dataclass
class SweepReport:
    """Raw per-run metrics plus enough metadata to recompute every summary."""

    param_name: str
    grid: list[float]
    alpha: float
    q: float
    n_runs: int
    methods: list[str]
    master_seed: int
    points: list[SweepPoint]

    @property
    def band_half_width(self) -> float:
        return coverage_band_half_width(self.alpha, self.n_runs)

    def cells(self) -> list[dict]:
        """One summary row per (grid value, method)."""
        rows = []
        for point in self.points:
            for method in self.methods:
                runs = [r for r in point.runs if r.method == method]
                n = len(runs)
                violations = sum(1 for r in runs if r.fdp > self.q)
                powers = [r.tpp for r in runs if r.tpp is not None]
                rows.append(
                    {
                        "param": self.param_name,
                        "value": point.value,
                        "method": method,
                        "n_runs": n,
                        "violations": violations,
                        "violation_rate": violations / n if n else 0.0,
                        "mean_power": sum(powers) / len(powers) if powers else None,
                        "n_power_runs": len(powers),
                        "band_half_width": self.band_half_width,
                    }
                )
        return rows

    def to_dict(self) -> dict:
        return {
            "param_name": self.param_name,
            "grid": [float(v) for v in self.grid],
            "alpha": self.alpha,
            "q": self.q,
            "n_runs": self.n_runs,
            "methods": list(self.methods),
            "master_seed": self.master_seed,
            "points": [pt.to_dict() for pt in self.points],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SweepReport":
        return cls(
            param_name=d["param_name"],
            grid=[float(v) for v in d["grid"]],
            alpha=float(d["alpha"]),
            q=float(d["q"]),
            n_runs=int(d["n_runs"]),
            methods=list(d["methods"]),
            master_seed=int(d["master_seed"]),
            points=[SweepPoint.from_dict(pt) for pt in d["points"]],
        )


def run_sweep(
    base_sim: SimConfig,
    cfg: RunConfig,
    param_name: str,
    grid,
    n_runs: int,
    master_seed: int,
    cache_dir=None,
    jobs: int = 1,
) -> SweepReport:
    """N independent runs at every grid value of one simulation parameter.

    Calibration is computed once per grid point (and cached on disk across
    points that share p), since it never depends on the data.
    """
    grid = list(grid)
    if not grid:
        raise InvalidParameterError("sweep grid must be nonempty")
    if n_runs < 1:
        raise InvalidParameterError(f"n_runs must be >= 1, got {n_runs}")
    if param_name not in SWEEP_PARAMS:
        raise InvalidParameterError(
            f"unknown sweep parameter {param_name!r}; expected one of {SWEEP_PARAMS}"
        )
    root = stream(master_seed)
    grid_streams = split(root, len(grid))
    points = []
    for value, grid_stream in zip(grid, grid_streams):
        sim_v = base_sim.with_param(param_name, value)
        calibrations = calibrations_for_selectors(
            sim_v.p, cfg, master_seed, cache_dir=cache_dir
        )
        run_streams = split(grid_stream, n_runs)

        def one(run_idx: int) -> list[RunMetrics]:
            return run_once(
                sim_v,
                cfg,
                run_streams[run_idx],
                run_id=run_idx,
                calibrations=calibrations,
            )

        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                per_run = list(pool.map(one, range(n_runs)))
        else:
            per_run = [one(i) for i in range(n_runs)]
        runs = [m for batch in per_run for m in batch]
        points.append(SweepPoint(value=float(value), runs=runs))
    return SweepReport(
        param_name=param_name,
        grid=[float(v) for v in grid],
        alpha=cfg.alpha,
        q=cfg.q,
        n_runs=n_runs,
        methods=list(cfg.methods),
        master_seed=master_seed,
        points=points,
    )


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_report(report: SweepReport, path, fmt: str = "csv") -> str:
    """Write the report; ``fmt`` is one of csv (summary), long, json, runs.

    csv: one row per method x grid point. long: plot-ready rows
    (param, value, method, metric, mean, band). json: full round-trippable
    dump. runs: one row per individual run.
    """
    path = str(path)
    if fmt == "json":
        with open(path, "w") as fh:
            json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path
    if fmt == "csv":
        fields = [
            "param",
            "value",
            "method",
            "n_runs",
            "violations",
            "violation_rate",
            "mean_power",
            "n_power_runs",
            "band_half_width",
        ]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(fields)
            for cell in report.cells():
                writer.writerow([_csv_cell(cell[f]) for f in fields])
        return path
    if fmt == "long":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["param", "value", "method", "metric", "mean", "band"])
            for cell in report.cells():
                writer.writerow(
                    [
                        cell["param"],
                        _csv_cell(cell["value"]),
                        cell["method"],
                        "fdp_violation_rate",
                        _csv_cell(cell["violation_rate"]),
                        _csv_cell(cell["band_half_width"]),
                    ]
                )
                writer.writerow(
                    [
                        cell["param"],
                        _csv_cell(cell["value"]),
                        cell["method"],
                        "power",
                        _csv_cell(cell["mean_power"]),
                        "",
                    ]
                )
        return path
    if fmt == "runs":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["param", "value", "run_id", "method", "fdp", "tpp", "selected_size"]
            )
            for point in report.points:
                for r in point.runs:
                    writer.writerow(
                        [
                            report.param_name,
                            _csv_cell(point.value),
                            r.run_id,
                            r.method,
                            _csv_cell(r.fdp),
                            _csv_cell(r.tpp),
                            r.selected_size,
                        ]
                    )
        return path
    raise InvalidParameterError(f"unknown report format {fmt!r}")


def load_report(path) -> SweepReport:
    """Parse a JSON report back into an equal SweepReport."""
    with open(path) as fh:
        return SweepReport.from_dict(json.load(fh))
