"""Command-line front end: simulate / calibrate / infer / bench.

Configuration comes from a flat ``key = value`` file plus command-line
overrides whose flag names mirror the config keys; every run writes the
fully resolved configuration next to its outputs so results can be
reproduced from that file alone. All outputs are deterministic functions of
(config, seed).

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .bench import emit_report, run_sweep
from .errors import (
    ConfigError,
    DataFormatError,
    InvalidParameterError,
    KopiError,
)
from .knockoffs import model_from_covariance, toeplitz_correlation
from .pipeline import (
    RunConfig,
    STANDARD_SELECTORS,
    calibration_for,
    calibrations_for_selectors,
    compute_draw_statistics,
    evaluate_selector,
    scheme_for_selector,
)
from .pistats import AggregationScheme
from .rng import split, stream
from .simgen import SimConfig, save_dataset_csv, simulate_with_streams

logger = logging.getLogger("kopi")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _parse_bool(text: str) -> bool:
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _parse_opt_int(text: str) -> int | None:
    return None if text in ("", "none") else int(text)


def _parse_opt_float(text: str) -> float | None:
    return None if text in ("", "none") else float(text)


@dataclass
class AppConfig:
    """Fully resolved settings for one CLI invocation."""

    seed: int = 0
    out: str = "."
    cache_dir: str | None = None
    threads: int = 1
    dataset: str | None = None
    n: int | None = None
    p: int | None = None
    rho: float = 0.5
    sparsity: float = 0.1
    snr: float = 2.0
    standardize: bool = False
    knockoffs: str = "gaussian"
    oracle_cov: bool = True  # simulated sources only; datasets always estimate
    d_draws: int = 50
    b_null: int = 10_000
    b_prime: int = 1_000
    k_max: int | None = None
    alpha: float = 0.1
    q: float = 0.1
    q_e: float | None = None
    scheme: str = "harmonic"
    gamma: float = 0.5
    ako_gamma: float = 0.5
    pairing: str = "sorted"
    methods: str = "kopi"
    folds: int = 5
    grid_size: int = 20
    share_lambda: bool = False
    param: str | None = None
    grid: str | None = None
    n_runs: int = 10


_PARSERS = {
    "seed": int,
    "out": str,
    "cache_dir": lambda s: None if s in ("", "none") else str(s),
    "threads": int,
    "dataset": lambda s: None if s in ("", "none") else str(s),
    "n": _parse_opt_int,
    "p": _parse_opt_int,
    "rho": float,
    "sparsity": float,
    "snr": float,
    "standardize": _parse_bool,
    "knockoffs": str,
    "oracle_cov": _parse_bool,
    "d_draws": int,
    "b_null": int,
    "b_prime": int,
    "k_max": _parse_opt_int,
    "alpha": float,
    "q": float,
    "q_e": _parse_opt_float,
    "scheme": str,
    "gamma": float,
    "ako_gamma": float,
    "pairing": str,
    "methods": str,
    "folds": int,
    "grid_size": int,
    "share_lambda": _parse_bool,
    "param": lambda s: None if s in ("", "none") else str(s),
    "grid": lambda s: None if s in ("", "none") else str(s),
    "n_runs": int,
}


def parse_config_file(path) -> dict:
    """Flat ``key = value`` lines; '#' starts a comment; unknown keys fail."""
    values: dict = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, text = line.partition("=")
        key = key.strip()
        if key not in _PARSERS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _PARSERS[key](text.strip())
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return values


def resolve_config(args: argparse.Namespace) -> AppConfig:
    """Layer defaults <- config file <- environment <- command-line flags."""
    values: dict = {}
    if args.config:
        values.update(parse_config_file(args.config))
    if "KOPI_CACHE_DIR" in os.environ:
        values["cache_dir"] = os.environ["KOPI_CACHE_DIR"] or None
    if "KOPI_THREADS" in os.environ:
        try:
            values["threads"] = int(os.environ["KOPI_THREADS"])
        except ValueError as exc:
            raise ConfigError(f"KOPI_THREADS must be an integer: {exc}") from exc
    for key in _PARSERS:
        flag = getattr(args, key, None)
        if flag is not None:
            try:
                values[key] = _PARSERS[key](flag)
            except (ValueError, ConfigError) as exc:
                raise ConfigError(f"bad value for --{key}: {exc}") from exc
    try:
        return AppConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def write_resolved_config(app: AppConfig, out_dir: Path) -> Path:
    path = out_dir / "resolved.cfg"
    lines = []
    for f in fields(AppConfig):
        value = getattr(app, f.name)
        if value is None:
            continue
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name} = {value}")
    path.write_text("\n".join(lines) + "\n")
    return path


def _methods_tuple(app: AppConfig) -> tuple[str, ...]:
    names = tuple(m.strip() for m in app.methods.split(",") if m.strip())
    if not names:
        raise ConfigError("methods list is empty")
    for name in names:
        if name not in STANDARD_SELECTORS:
            raise ConfigError(
                f"unknown method {name!r}; expected one of {STANDARD_SELECTORS}"
            )
    return names


def run_config_from(app: AppConfig) -> RunConfig:
    try:
        return RunConfig(
            d_draws=app.d_draws,
            knockoff_method=app.knockoffs,
            folds=app.folds,
            grid_size=app.grid_size,
            share_lambda=app.share_lambda,
            b_null=app.b_null,
            b_prime=app.b_prime,
            k_max=app.k_max,
            alpha=app.alpha,
            q=app.q,
            q_e=app.q_e,
            scheme=AggregationScheme(app.scheme, app.gamma),
            ako_gamma=app.ako_gamma,
            pairing=app.pairing,
            methods=_methods_tuple(app),
            oracle_covariance=app.oracle_cov,
        )
    except InvalidParameterError as exc:
        raise ConfigError(str(exc)) from exc


def sim_config_from(app: AppConfig) -> SimConfig:
    if app.n is None or app.p is None:
        raise ConfigError("simulation source requires both n and p")
    try:
        return SimConfig(
            n=app.n,
            p=app.p,
            rho=app.rho,
            sparsity=app.sparsity,
            snr=app.snr,
            seed=app.seed,
            standardize=app.standardize,
        )
    except InvalidParameterError as exc:
        raise ConfigError(str(exc)) from exc


def load_dataset(path) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """CSV with a header containing exactly one 'y' column; all cells numeric.

    Returns the feature matrix and response with columns centered, plus the
    feature names in column order.
    """
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataFormatError(f"cannot open dataset {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        if header.count("y") != 1:
            raise DataFormatError(
                f"{path}: header must contain exactly one 'y' column"
            )
        y_col = header.index("y")
        names = [h for i, h in enumerate(header) if i != y_col]
        if not names:
            raise DataFormatError(f"{path}: no feature columns besides 'y'")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataFormatError(
                    f"{path}: row {lineno}: expected {len(header)} fields, "
                    f"got {len(row)}",
                    row=lineno,
                )
            parsed = []
            for col, cell in enumerate(row):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise DataFormatError(
                        f"{path}: row {lineno}, column {header[col]!r}: "
                        f"non-numeric value {cell.strip()!r}",
                        row=lineno,
                        column=header[col],
                    ) from None
            rows.append(parsed)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    table = np.asarray(rows, dtype=float)
    y = table[:, y_col]
    X = np.delete(table, y_col, axis=1)
    X = X - X.mean(axis=0)
    y = y - y.mean()
    return X, y, names


def _out_dir(app: AppConfig) -> Path:
    out = Path(app.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(app: AppConfig) -> int:
    out = _out_dir(app)
    sim = sim_config_from(app)
    data_rng, _, _ = split(stream(app.seed), 3)
    dataset = simulate_with_streams(sim, data_rng)
    csv_path, sidecar = save_dataset_csv(dataset, out / "dataset.csv")
    write_resolved_config(app, out)
    logger.info("dataset written: %s (support sidecar %s)", csv_path, sidecar)
    return EXIT_OK


def _calibration_inputs(app: AppConfig) -> tuple[int, RunConfig]:
    if app.dataset is not None and app.p is not None:
        raise ConfigError("dataset and simulation sources are mutually exclusive")
    cfg = run_config_from(app)
    if app.dataset is not None:
        X, _, _ = load_dataset(app.dataset)
        return X.shape[1], cfg
    if app.p is None:
        raise ConfigError("calibrate requires either p or a dataset")
    return app.p, cfg


def cmd_calibrate(app: AppConfig) -> int:
    out = _out_dir(app)
    p, cfg = _calibration_inputs(app)
    scheme = AggregationScheme(app.scheme, app.gamma)
    result = calibration_for(p, cfg, scheme, app.seed, cache_dir=app.cache_dir)
    payload = {
        "p": p,
        "alpha": cfg.alpha,
        "D": cfg.d_draws,
        "B": cfg.b_null,
        "B_prime": cfg.b_prime,
        "k_max": result.family.k_max,
        "scheme": scheme.kind,
        "gamma": scheme.gamma,
        "pairing": cfg.pairing,
        "seed": app.seed,
        "lambda": result.lam,
        "degenerate": result.degenerate,
        "empirical_jer": result.empirical_jer,
        "thresholds": [float(t) for t in result.family.thresholds],
    }
    path = out / "calibration.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    write_resolved_config(app, out)
    logger.info("calibration written: %s", path)
    return EXIT_OK


def cmd_infer(app: AppConfig) -> int:
    out = _out_dir(app)
    cfg = run_config_from(app)
    if app.dataset is not None and (app.n is not None or app.p is not None):
        raise ConfigError("dataset and simulation sources are mutually exclusive")
    root = stream(app.seed)
    data_rng, stats_rng, _ = split(root, 3)
    names: list[str] | None = None
    model = None
    if app.dataset is not None:
        X, y, names = load_dataset(app.dataset)
    else:
        sim = sim_config_from(app)
        dataset = simulate_with_streams(sim, data_rng)
        X, y = dataset.design, dataset.response
        if cfg.oracle_covariance and cfg.knockoff_method == "gaussian":
            model = model_from_covariance(toeplitz_correlation(sim.p, sim.rho))
    stats = compute_draw_statistics(X, y, cfg, stats_rng, model=model)
    calibrations = calibrations_for_selectors(
        X.shape[1], cfg, app.seed, cache_dir=app.cache_dir
    )
    seeds = {"master": app.seed}
    for name in cfg.methods:
        selection = evaluate_selector(name, stats, cfg, calibrations, seeds=seeds)
        doc = selection.to_dict()
        if names is not None:
            doc["selected_names"] = [names[i] for i in selection.selected]
        path = out / f"selection_{name}.json"
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        logger.info(
            "%s: %d selected%s -> %s",
            name,
            selection.size,
            ""
            if selection.fdp_bound is None
            else f" (FDP bound {selection.fdp_bound:.3f})",
            path,
        )
    write_resolved_config(app, out)
    return EXIT_OK


def cmd_bench(app: AppConfig) -> int:
    out = _out_dir(app)
    cfg = run_config_from(app)
    sim = sim_config_from(app)
    if app.param is None or app.grid is None:
        raise ConfigError("bench requires param and grid")
    try:
        grid = [float(v) for v in app.grid.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad grid: {exc}") from exc
    report = run_sweep(
        sim,
        cfg,
        app.param,
        grid,
        app.n_runs,
        master_seed=app.seed,
        cache_dir=app.cache_dir,
        jobs=max(1, app.threads),
    )
    emit_report(report, out / "report.csv", fmt="csv")
    emit_report(report, out / "report_long.csv", fmt="long")
    emit_report(report, out / "report.json", fmt="json")
    emit_report(report, out / "runs.csv", fmt="runs")
    write_resolved_config(app, out)
    for cell in report.cells():
        logger.info(
            "%s=%s %s: violation_rate=%.3f power=%s",
            report.param_name,
            cell["value"],
            cell["method"],
            cell["violation_rate"],
            "n/a" if cell["mean_power"] is None else f"{cell['mean_power']:.3f}",
        )
    return EXIT_OK


_COMMANDS = {
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "infer": cmd_infer,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kopi",
        description="Knockoff-based variable selection with FDP control",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", default=None, help="key = value config file")
        for key in _PARSERS:
            cmd.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    args = build_parser().parse_args(argv)
    try:
        app = resolve_config(args)
        return _COMMANDS[args.command](app)
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        return EXIT_CONFIG
    except InvalidParameterError as exc:
        logger.error("config error: %s", exc)
        return EXIT_CONFIG
    except DataFormatError as exc:
        logger.error("data error: %s", exc)
        return EXIT_DATA
    except KopiError as exc:
        logger.error("numerical error: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
