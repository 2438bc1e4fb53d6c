"""Command-line interface.

Exit codes: 0 success, 1 numerical or unexpected library error, 2 invalid
configuration or input, 3 data-generation failure, 4 a sweep contract failed.
"""

from __future__ import annotations

import datetime as _dt
import logging
import math
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__, io
from .config import ExperimentConfig, load_config, validate_grid
from .errors import ConfigurationError, GenerationError, SpecflowError, ValidationError
from .filters import gp_lambda
from .harness import build_system, default_jobs, run_sweep, write_report
from .learners import (
    KernelExpansionModel,
    build_forcing_matrix,
    fit_field,
    fit_flow,
    observability_report,
    select_centers,
)
from .sampling import Dataset, generate_dataset
from .vlmm import coefficients, parse_scheme

OUTPUT_ENV = "SPECFLOW_OUTPUT_DIR"
EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_GENERATION, EXIT_CONTRACT = 0, 1, 2, 3, 4


class _Exit(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _fail(code: int, message: str):
    raise _Exit(code, message)


def _output_dir(option, cfg: ExperimentConfig | None) -> Path:
    if option:
        return Path(option)
    if os.environ.get(OUTPUT_ENV):
        return Path(os.environ[OUTPUT_ENV])
    return Path(cfg.output.dir if cfg is not None else ".")


def _load(config_ref) -> ExperimentConfig:
    try:
        return load_config(config_ref)
    except ConfigurationError as exc:
        _fail(EXIT_CONFIG, f"configuration error: {exc}")


def _guard(fn):
    """Map library exceptions to the documented exit codes."""

    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _Exit as exc:
            click.echo(str(exc), err=True)
            sys.exit(exc.code)
        except (ConfigurationError, ValidationError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except GenerationError as exc:
            click.echo(f"generation error: {exc}", err=True)
            sys.exit(EXIT_GENERATION)
        except SpecflowError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_ERROR)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@click.group()
@click.version_option(__version__, prog_name="specflow")
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Kernel flow and vector-field experiments: simulate, fit, sweep, predict, coeffs."""
    logging.basicConfig(level=logging.INFO if verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")


def _simulate(cfg: ExperimentConfig, system, ref, seed: int, n: int, noise: float | None = None):
    return generate_dataset(
        system,
        cfg.sampling.design_spec(),
        cfg.sampling.step_law_spec(),
        cfg.scheme.scheme.M,
        n,
        noise_sigma=cfg.sampling.noise_sigma if noise is None else noise,
        seed=seed,
        ref=ref,
    )


@main.command()
@click.argument("config")
@click.option("--out", "out", type=click.Path(file_okay=False), help="Output directory.")
@_guard
def simulate(config, out):
    """Generate a windowed dataset from CONFIG (a path or shipped config name)."""
    cfg = _load(config)
    system, ref = build_system(cfg)
    ds = _simulate(cfg, system, ref, cfg.seeds.dataset, cfg.sampling.n_windows)
    outdir = _output_dir(out, cfg)
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    paths = ds.save(outdir / cfg.name, manifest_extra={"config": cfg.to_dict(), "created_utc": stamp})
    p = cfg.scheme.scheme.p
    m = ds.step_moments((1, 2 * p + 2))
    click.echo(f"windows: {len(ds)}  M: {ds.M}  dim: {ds.dim}")
    click.echo(f"E[H] = {io.fmt(m[1])}")
    click.echo(f"E[H^{2 * p + 2}] = {io.fmt(m[2 * p + 2])}")
    for kind, path in paths.items():
        click.echo(f"{kind}: {path}")


def _fit_lambda(cfg: ExperimentConfig, ds: Dataset) -> float:
    lam = cfg.filter.filter_spec.lam
    if cfg.filter.lambda_mode == "gp":
        lam = max(gp_lambda(float(ds.meta.get("noise_sigma", 0.0)) ** 2, len(ds)), cfg.filter.lambda_floor)
    if cfg.fit.target == "field" and cfg.filter.lambda_scaling == "h2":
        lam *= float(np.mean(ds.h**2))
    return lam


@main.command()
@click.argument("config")
@click.argument("dataset")
@click.option("--out", "out", type=click.Path(file_okay=False), help="Output directory.")
@_guard
def fit(config, dataset, out):
    """Fit a flow or vector-field model (per [fit] target) to DATASET."""
    cfg = _load(config)
    try:
        ds = Dataset.load(dataset)
    except (FileNotFoundError, KeyError, ValueError) as exc:
        _fail(EXIT_CONFIG, f"cannot read dataset {dataset}: {exc}")
    scheme = cfg.scheme.scheme
    if ds.M != scheme.M:
        _fail(EXIT_CONFIG, f"dataset has M={ds.M} but scheme {scheme.name} needs M={scheme.M}")
    if cfg.filter.lambda_mode == "oracle":
        _fail(EXIT_CONFIG, "lambda_mode 'oracle' is only available in sweeps")
    system, ref = build_system(cfg)
    lam = _fit_lambda(cfg, ds)
    spec = cfg.filter.filter_spec.with_lambda(lam)
    kernel = "median" if cfg.kernel.lengthscales == "median" else tuple(cfg.kernel.lengthscales)
    heldout = _simulate(cfg, system, ref, cfg.seeds.heldout, cfg.fit.n_heldout, noise=0.0)
    centers = select_centers(ds, cfg.fit.max_centers)
    fm = build_forcing_matrix(ds, scheme, kernel if cfg.fit.target == "field" else "median", centers)
    obs = observability_report(fm)
    if cfg.fit.target == "flow":
        model = fit_flow(ds, kernel, spec, include_zeta=cfg.kernel.include_zeta)
        inc = cfg.kernel.include_zeta
        train = model.predict(ds.flow_inputs(inc)) - ds.flow_targets()
        held = model.predict(heldout.flow_inputs(inc)) - heldout.flow_targets()
    else:
        model = fit_field(ds, scheme, kernel, spec, forcing=fm)
        train = model.predict(ds.anchors) - system.rhs(ds.anchors)
        held = model.predict(heldout.anchors) - system.rhs(heldout.anchors)

    def rmse(e):
        return math.sqrt(float(np.mean(np.sum(e**2, axis=1))))

    model.meta.update({"system": cfg.system.name, "target": cfg.fit.target, "config": cfg.name})
    outdir = _output_dir(out, cfg)
    model_path = model.save(outdir / f"{cfg.name}.model.json")
    metrics = {
        "target": cfg.fit.target,
        "lambda": lam,
        "filter": spec.label,
        "ell": len(ds),
        "train_rmse": rmse(train),
        "heldout_rmse": rmse(held),
        "n_heldout": cfg.fit.n_heldout,
        "c_obs_hat": obs.c_obs_hat,
        "c_obs_over_h": obs.c_obs_over_h,
        "n_centers": int(centers.shape[0]),
    }
    metrics_path = io.write_json(outdir / f"{cfg.name}.metrics.json", metrics)
    click.echo(f"train_rmse = {io.fmt(metrics['train_rmse'])}")
    click.echo(f"heldout_rmse = {io.fmt(metrics['heldout_rmse'])}")
    click.echo(f"c_obs_hat = {io.fmt(obs.c_obs_hat)}")
    click.echo(f"lambda = {io.fmt(lam)}")
    click.echo(f"model: {model_path}")
    click.echo(f"metrics: {metrics_path}")


@main.command()
@click.argument("config")
@click.option("--jobs", "-j", type=click.IntRange(min=1), default=None,
              help="Worker processes (default: number of logical processors).")
@click.option("--out", "out", type=click.Path(file_okay=False), help="Output directory.")
@click.option("--no-figures", is_flag=True, help="Skip PNG rendering; CSV and JSON outputs are unchanged.")
@_guard
def sweep(config, jobs, out, no_figures):
    """Run the rate experiment in CONFIG; exit 4 if any contract fails."""
    cfg = _load(config)
    try:
        validate_grid(cfg)
    except ConfigurationError as exc:
        _fail(EXIT_CONFIG, f"configuration error: {exc}")
    report = run_sweep(cfg, jobs=default_jobs() if jobs is None else jobs)
    paths = write_report(report, _output_dir(out, cfg), figures=not no_figures)
    for c in report.contracts:
        click.echo(f"{c.status:8s} {c.name}: {c.detail or c.bound}")
    for flag in report.flags:
        click.echo(f"FLAG     {flag}")
    click.echo(f"{report.name}: {report.status} ({report.runtime_s:.1f} s)")
    for kind, path in paths.items():
        click.echo(f"{kind}: {path}")
    if not report.passed:
        sys.exit(EXIT_CONTRACT)


def _read_points(path: Path, dim: int):
    text = path.read_text()
    if not text.strip():
        return [f"z{i}" for i in range(dim)], np.empty((0, dim))
    columns, arr = io.read_csv(path)
    return columns, arr


@main.command()
@click.argument("model_path", metavar="MODEL")
@click.argument("points", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out", type=click.Path(dir_okay=False), help="Output CSV (default: stdout).")
@_guard
def predict(model_path, points, out):
    """Evaluate a saved model at the rows of the POINTS CSV."""
    try:
        model = KernelExpansionModel.load(model_path)
    except (OSError, KeyError, ValueError) as exc:
        _fail(EXIT_CONFIG, f"cannot read model {model_path}: {exc}")
    try:
        columns, pts = _read_points(Path(points), model.input_dim)
    except ValueError as exc:
        _fail(EXIT_CONFIG, f"cannot read points {points}: {exc}")
    if len(columns) != model.input_dim:
        _fail(EXIT_CONFIG, f"points have {len(columns)} columns, model expects {model.input_dim}")
    pred = model.predict(pts) if pts.shape[0] else np.empty((0, model.output_dim))
    out_cols = list(columns) + [f"pred_{c}" for c in range(model.output_dim)]
    rows = np.concatenate([pts, pred], axis=1)
    if out:
        io.write_csv(out, out_cols, rows)
    else:
        click.echo(",".join(out_cols))
        for row in rows:
            click.echo(",".join(io.fmt(v) for v in row))


@main.command()
@click.argument("scheme")
@click.option("--zeta", default="", help="Comma-separated step ratios (default: all ones).")
@_guard
def coeffs(scheme, zeta):
    """Print variable-step coefficients of SCHEME (e.g. ab2, am3, bdf4) as JSON."""
    sch = parse_scheme(scheme)
    try:
        z = [float(v) for v in zeta.split(",") if v.strip()] if zeta else [1.0] * (sch.M - 1)
    except ValueError:
        _fail(EXIT_CONFIG, f"cannot parse --zeta {zeta!r}")
    c = coefficients(sch, z)
    click.echo(io.dumps({
        "scheme": sch.name, "order": sch.p, "implicit": sch.implicit, "zeta": list(c.zeta),
        "alpha": c.alpha.tolist(), "beta": c.beta.tolist(), "lags": c.lags.tolist(), "cond": c.cond,
    }).rstrip())


if __name__ == "__main__":  # pragma: no cover
    main()
