"""Batch experiment runner.

    stabfield <command> [--config PATH] [--set section.key=value ...]
                        [--out DIR] [--workers N] [--seed U64]

Exit status: 0 success, 2 invalid input, 3 certification failure,
4 numeric failure (overflow, degenerate fit, failed identity).
"""

from __future__ import annotations

import argparse
import sys
from typing import Callable

import numpy as np

from . import __version__
from .config import COMMANDS, ExperimentConfig, load_config
from .empirical import local_functional, test_function
from .errors import CertificationError, ContractError, NumericError, ParameterError, StabfieldError
from .estimators import (
    CumulantScanConfig,
    PairCorrelationConfig,
    arbitrate_factor,
    estimate_lln,
    estimate_rate_basis,
    estimate_scaled_cumulant,
    estimate_value_law,
    estimate_variance_direct,
    estimate_variance_pair,
    rate_quadratic_form,
)
from .functionals import evaluate_all
from .geometry import TorusGeometry, sample_poisson
from .report import csv_text, write_error, write_outputs
from .seeding import derive
from .specinfo import DiscreteConfigSpace, verify_instance
from .stabilization import MIN_CERTIFIED, default_grid, fit_tail, sample_radius_distribution

EXIT_OK, EXIT_INVALID, EXIT_CERTIFICATION, EXIT_NUMERIC = 0, 2, 3, 4

# Each command returns (results, extra, csv body, exit status).
Outcome = tuple[list, dict, str, int]


def _pair_config(cfg: ExperimentConfig) -> PairCorrelationConfig:
    p = cfg.pair
    return PairCorrelationConfig(
        r_max=p.r_max,
        n_shells=p.n_shells,
        aux_volume=p.aux_volume,
        replicates_per_shell=p.replicates_per_shell,
        diagonal_replicates=p.diagonal_replicates,
        pair_term_factor=p.pair_term_factor,
        method=p.method,
        configurations=p.configurations,
    )


def cmd_sample(cfg: ExperimentConfig, workers: int) -> Outcome:
    spec = cfg.functional_spec()
    lam = cfg.lambda_grid()[-1]
    d = cfg.process.dimension
    pts = sample_poisson(TorusGeometry.from_volume(d, lam), cfg.process.tau, cfg.estimation.seed, aux_bound=spec.aux_bound())
    xi = evaluate_all(pts, spec) if len(pts) else np.zeros(0)
    header = [f"x{i + 1}" for i in range(d)] + ["time", "aux", "xi"]
    rows = [[*p, t, a, v] for p, t, a, v in zip(pts.positions.tolist(), pts.time.tolist(), pts.aux.tolist(), xi.tolist())]
    summary = {"label": "sample", "lambda": lam, "n_points": len(pts), "score_sum": float(np.sum(xi))}
    return [summary], {}, csv_text(header, rows), EXIT_OK


def cmd_value_law(cfg: ExperimentConfig, workers: int) -> Outcome:
    e = cfg.estimation
    law = estimate_value_law(
        cfg.functional_spec(), cfg.process.tau, cfg.lambda_grid()[-1], e.replicates, e.bins or None, e.seed,
        dimension=cfg.process.dimension, workers=workers,
    )
    if e.bins:
        header = ["lo", "hi", "probability", "std_error", "count"]
        rows = [[lo, hi, r.value, r.std_error, r.metadata["count"]] for (lo, hi), r in zip(law.support, law.reports)]
    else:
        header = ["value", "probability", "std_error", "count"]
        rows = [[v, r.value, r.std_error, r.metadata["count"]] for v, r in zip(law.support, law.reports)]
    return list(law.reports), {}, csv_text(header, rows), EXIT_OK


def cmd_lln(cfg: ExperimentConfig, workers: int) -> Outcome:
    e = cfg.estimation
    reps = estimate_lln(
        cfg.functional_spec(), test_function(e.test_function), cfg.process.tau, cfg.lambda_grid(), e.replicates, e.seed,
        dimension=cfg.process.dimension, workers=workers, target_replicates=e.target_replicates,
    )
    rows = [[r.metadata["lambda"], r.value, r.std_error, r.metadata.get("target"), r.metadata.get("target_std_error")] for r in reps]
    return reps, {}, csv_text(["lambda", "value", "std_error", "target", "target_std_error"], rows), EXIT_OK


def cmd_variance(cfg: ExperimentConfig, workers: int) -> Outcome:
    e = cfg.estimation
    spec, f = cfg.functional_spec(), test_function(e.test_function)
    d = cfg.process.dimension
    direct = estimate_variance_direct(spec, f, cfg.process.tau, cfg.lambda_grid(), e.replicates, e.seed, dimension=d, workers=workers)
    rows = [["direct", r.metadata["lambda"], "", r.value, r.std_error] for r in direct]
    results, extra = list(direct), {}
    if cfg.pair.enabled:
        pair = estimate_variance_pair(spec, f, cfg.process.tau, _pair_config(cfg), derive(e.seed, 0, "cli-pair"), dimension=d, workers=workers)
        results.append(pair)
        for key, v in sorted(pair.metadata["by_factor"].items()):
            rows.append(["pair", "", key, v["value"], v["std_error"]])
        extra["factor_check"] = arbitrate_factor(direct[-1], pair)
    return results, extra, csv_text(["estimator", "lambda", "factor", "value", "std_error"], rows), EXIT_OK


def cmd_radius_tails(cfg: ExperimentConfig, workers: int) -> Outcome:
    rd, p = cfg.radius, cfg.process
    lam = cfg.lambda_grid()[-1]
    grid = rd.grid or default_grid(p.tau, p.dimension, TorusGeometry.from_volume(p.dimension, lam).side_length, rd.grid_size)
    estimates = sample_radius_distribution(
        cfg.functional_spec(), p.tau, lam, rd.n_points, grid, rd.resamples, cfg.estimation.seed,
        dimension=p.dimension, workers=workers,
    )
    n_cert = sum(e.certified for e in estimates)
    if n_cert < MIN_CERTIFIED:
        raise CertificationError(f"only {n_cert} of {len(estimates)} radii certified (need {MIN_CERTIFIED})")
    fit = fit_tail(estimates, rd.min_count)
    summary = dict(fit.summary(), label="radius tail fit", rate=fit.rate, n_samples=fit.n_samples,
                   certified=n_cert, uncertified=len(estimates) - n_cert, min_count_per_bin=fit.min_count_per_bin)
    return [summary], {}, fit.to_csv(), EXIT_OK


def cmd_cumulant_scan(cfg: ExperimentConfig, workers: int) -> Outcome:
    c, e, p = cfg.cumulant, cfg.estimation, cfg.process
    ccfg = CumulantScanConfig(c.beta, cfg.lambda_grid(), e.replicates)
    if c.local_functional:
        stat = local_functional(c.local_functional, p.dimension)
    else:
        stat = test_function(e.test_function)
    reps = estimate_scaled_cumulant(
        cfg.functional_spec(), stat, p.tau, ccfg, e.seed, dimension=p.dimension, workers=workers,
        quadrature_points=c.quadrature_points or None, half_variance=c.half_variance,
    )
    rows = [[r.metadata["lambda"], r.metadata["alpha"], r.value, r.std_error, r.metadata.get("ratio_to_half_variance")] for r in reps]
    return reps, {}, csv_text(["lambda", "alpha", "value", "std_error", "ratio_to_half_variance"], rows), EXIT_OK


def cmd_rate_eval(cfg: ExperimentConfig, workers: int) -> Outcome:
    r, e, p = cfg.rate, cfg.estimation, cfg.process
    fs = [test_function(name) for name in r.functions]
    basis = estimate_rate_basis(
        cfg.functional_spec(), fs, p.tau, method=r.method, lam=cfg.lambda_grid()[-1], replicates=e.replicates,
        pcfg=_pair_config(cfg), seed=e.seed, dimension=p.dimension, workers=workers,
    )
    g = np.asarray(r.coefficients, dtype=float)
    rows = []
    for k in range(1, len(fs) + 1):
        rows.append([k, rate_quadratic_form(basis.restrict(k), g[:k])])
    results = [{"label": f"J_{k}", "k": k, "value": v} for k, v in rows]
    extra = {"gram": basis.gram, "gram_std_error": basis.gram_std_error, "functions": list(r.functions)}
    return results, extra, csv_text(["k", "J"], rows), EXIT_OK


def cmd_specinfo_verify(cfg: ExperimentConfig, workers: int) -> Outcome:
    s = cfg.specinfo
    space = DiscreteConfigSpace(s.cells, s.max_occupancy, s.cell_volume, s.intensity)
    records = []
    for i in range(s.instances):
        records += verify_instance(space, derive(cfg.estimation.seed, i, "specinfo"), s.perturbations)
    rows = [[r.identity, r.instance_hash, r.residual, r.passed] for r in records]
    status = EXIT_OK if all(r.passed for r in records) else EXIT_NUMERIC
    extra = {"space": space.to_dict(), "n_states": space.n_states, "tolerance": space.tolerance}
    return records, extra, csv_text(["identity", "instance_hash", "residual", "pass"], rows), status


COMMAND_TABLE: dict[str, Callable[[ExperimentConfig, int], Outcome]] = {
    "sample": cmd_sample,
    "value-law": cmd_value_law,
    "lln": cmd_lln,
    "variance": cmd_variance,
    "radius-tails": cmd_radius_tails,
    "cumulant-scan": cmd_cumulant_scan,
    "rate-eval": cmd_rate_eval,
    "specinfo-verify": cmd_specinfo_verify,
}


def _exit_for(exc: Exception) -> int:
    if isinstance(exc, CertificationError):
        return EXIT_CERTIFICATION
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    return EXIT_INVALID


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stabfield", description="Monte Carlo experiments for stabilizing functionals.")
    ap.add_argument("command", nargs="?", choices=COMMANDS, help="command to run (overrides run.command)")
    ap.add_argument("--config", help="INI config file")
    ap.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override one config key")
    ap.add_argument("--out", default="stabfield-out", help="output directory")
    ap.add_argument("--workers", type=int, help="worker processes (results do not depend on it)")
    ap.add_argument("--seed", type=int, help="base seed (unsigned 64-bit)")
    ap.add_argument("--cells", type=int, help="shorthand for specinfo.cells")
    ap.add_argument("--max-occupancy", type=int, help="shorthand for specinfo.max_occupancy")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = list(args.set)
    for flag, key in ((args.seed, "estimation.seed"), (args.workers, "estimation.workers"),
                      (args.cells, "specinfo.cells"), (args.max_occupancy, "specinfo.max_occupancy")):
        if flag is not None:
            overrides.append(f"{key}={flag}")
    command = args.command or "unknown"
    try:
        cfg = load_config(args.config, overrides, args.command)
        command = cfg.command
        results, extra, body, status = COMMAND_TABLE[command](cfg, cfg.estimation.workers)
    except (StabfieldError, ValueError) as exc:
        code = getattr(exc, "code", "parameter")
        if isinstance(exc, ContractError) and not isinstance(exc, ParameterError):
            code = exc.code
        status = _exit_for(exc)
        write_error(args.out, command, code, str(exc), status)
        print(f"stabfield: {command}: {exc}", file=sys.stderr)
        return status
    report = {
        "command": command,
        "status": "ok" if status == EXIT_OK else "failed",
        "exit_code": status,
        "config": cfg.to_dict(),
        "input_hash": cfg.input_hash(),
        "version": __version__,
        "results": results,
        "extra": extra,
    }
    write_outputs(args.out, command, report, body, cfg.echo())
    return status


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
