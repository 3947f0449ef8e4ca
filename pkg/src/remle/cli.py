"""Command-line front end.

Four subcommands bind the library to files:

  estimate  fit (γ̂, σ̂_ε²) from a design CSV and a response CSV
  simulate  run a seeded replicated experiment from a TOML config
  theory    emit Marchenko-Pastur limit functionals over a γ grid
  diagnose  emit the delta / delta* / delta** curves for one dataset

Exit codes: 0 success, 1 input or config error, 2 numeric non-convergence
(results are still written). All numeric output is %.15g formatted.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import mp_theory, sim_harness, snr_group, snr_single, spectral_core
from .errors import RemleError
from .sim_harness import fmt_num

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NONCONVERGED = 2

THEORY_CSV_COLUMNS = (
    "tau", "gamma", "gamma0", "sigma0_sq",
    "trace_limit_1", "trace_limit_2", "d_factor", "c_gamma", "s_bar",
)

DIAGNOSE_CSV_COLUMNS = ("gamma", "delta", "delta_star", "delta_starstar", "mp_limit")


def _default_threads() -> int:
    env = os.environ.get("REMLE_THREADS", "")
    try:
        return max(1, int(env))
    except ValueError:
        return 1


def _read_matrix(path: str, header: bool) -> np.ndarray:
    try:
        M = np.loadtxt(path, delimiter=",", skiprows=1 if header else 0, ndmin=2)
    except OSError as exc:
        raise ValueError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise ValueError(f"non-numeric or ragged CSV {path}: {exc}") from exc
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{path} contains non-finite values")
    return M


def _read_vector(path: str, header: bool) -> np.ndarray:
    v = _read_matrix(path, header)
    if v.shape[1] != 1:
        raise ValueError(f"{path} must be a single-column CSV, got {v.shape[1]} columns")
    return v[:, 0]


def _parse_groups(text: str, p_total: int):
    try:
        sizes = [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise ValueError(f"--groups must be a comma list of integers, got {text!r}") from exc
    if not sizes or any(s < 1 for s in sizes):
        raise ValueError(f"--groups entries must be positive, got {text!r}")
    if sum(sizes) != p_total:
        raise ValueError(f"--groups sum to {sum(sizes)} but the design has p = {p_total} columns")
    return sizes


def _parse_grid(text: str) -> np.ndarray:
    """Either 'a,b,c' or 'start:stop:count' (inclusive linear grid)."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"grid range must be start:stop:count, got {text!r}")
        start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
        if count < 1:
            raise ValueError("grid count must be >= 1")
        grid = np.linspace(start, stop, count)
    else:
        grid = np.array([float(t) for t in text.split(",") if t.strip()])
    if grid.size == 0 or not np.all(np.isfinite(grid)):
        raise ValueError(f"empty or non-finite grid {text!r}")
    return grid


def _write_lines(path, lines) -> None:
    text = "\n".join(lines) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def cmd_estimate(args) -> int:
    Z = _read_matrix(args.matrix, args.header)
    y = _read_vector(args.response, args.header)
    n, p = Z.shape
    if y.shape[0] != n:
        raise ValueError(f"design has n = {n} rows but response has {y.shape[0]}")
    if args.groups:
        sizes = _parse_groups(args.groups, p)
        bounds = np.cumsum([0] + sizes)
        design = snr_group.GroupedDesign.from_matrices(
            [Z[:, bounds[i]:bounds[i + 1]] for i in range(len(sizes))]
        )
        est = snr_group.group_mm_fit(design, y, tol=args.tol, max_iter=args.max_iter)
        factor = snr_group.omega_factorize(design, 1.0, est.gamma_hat)
        sigma_eps_hat = float(y @ factor.solve(y)) / n
        s = len(sizes)
        cols = ["n"] + [f"p_{i+1}" for i in range(s)]
        vals = [n] + sizes
        cols += [f"gamma_hat_{i+1}" for i in range(s)] + ["gamma_hat_total"]
        vals += [float(v) for v in est.gamma_hat] + [float(np.sum(est.gamma_hat))]
        cols += ["sigma_eps_hat", "sigma_eps_hat_mm"]
        vals += [sigma_eps_hat, est.sigma_eps_sq]
        cols += [f"sigma_alpha_hat_{i+1}" for i in range(s)]
        vals += [float(v) for v in est.sigma_alpha_sq]
        report_pairs = list(zip([f"gamma_hat_{i+1}" for i in range(s)], est.gamma_hat))
    else:
        cache = spectral_core.decompose(Z)
        ry = spectral_core.rotate_response(cache, y)
        est = snr_single.mm_fit(cache, ry, tol=args.tol, max_iter=args.max_iter)
        sigma_eps_hat = snr_single.noise_variance(cache, ry, est.gamma_hat)
        cols = ["n", "p", "gamma_hat", "sigma_eps_hat", "sigma_eps_hat_mm", "sigma_alpha_hat"]
        vals = [n, p, est.gamma_hat, sigma_eps_hat, est.sigma_eps_sq, est.sigma_alpha_sq]
        report_pairs = [("gamma_hat", est.gamma_hat)]
    cols += ["iterations", "converged", "boundary", "loglik"]
    vals += [est.iterations, est.converged, est.boundary, est.final_loglik]
    _write_lines(args.out, [",".join(cols), ",".join(fmt_num(v) for v in vals)])

    print(f"fit on {n} x {p} design" + (f" with groups {args.groups}" if args.groups else ""))
    for name, value in report_pairs:
        print(f"  {name} = {fmt_num(value)}")
    print(f"  sigma_eps_hat = {fmt_num(sigma_eps_hat)}")
    print(f"  iterations = {est.iterations}, converged = {est.converged}"
          + (", boundary" if est.boundary else ""))
    return EXIT_OK if est.converged else EXIT_NONCONVERGED


def cmd_simulate(args) -> int:
    config = sim_harness.load_config(args.config)
    if args.seed is not None:
        config = sim_harness.config_from_dict(
            {**sim_harness.config_to_dict(config), "base_seed": args.seed}, source=args.config
        )
    records = sim_harness.run_experiment(
        config, tol=args.tol, max_iter=args.max_iter, threads=args.threads
    )
    out = Path(args.out) if args.out else Path(args.config).with_suffix("")
    out.parent.mkdir(parents=True, exist_ok=True)
    records_path = out.with_name(out.name + ".records.csv")
    summary_path = out.with_name(out.name + ".summary.csv")
    manifest_path = out.with_name(out.name + ".manifest.json")
    sim_harness.write_records_csv(records, records_path)
    sim_harness.write_summary_csv(config, sim_harness.summarize(records), summary_path)
    sim_harness.write_manifest(config, records, manifest_path)
    failed = [r for r in records if r.error is not None]
    nonconv = [r for r in records if not r.converged]
    print(f"wrote {records_path}, {summary_path}, {manifest_path}")
    print(f"{len(records)} replications, {len(nonconv)} non-converged, {len(failed)} failed")
    return EXIT_OK if not nonconv else EXIT_NONCONVERGED


def cmd_theory(args) -> int:
    spec = mp_theory.MpSpec.from_tau(args.tau)
    grid = _parse_grid(args.gamma_grid)
    if np.any(grid <= 0.0):
        raise ValueError("theory gamma grid values must be positive")
    lines = [",".join(THEORY_CSV_COLUMNS)]
    for gamma in grid:
        d = mp_theory.d_factor(spec, gamma)
        row = [
            args.tau, gamma, args.gamma0, args.sigma0_sq,
            mp_theory.trace_limit_inv(spec, gamma, 1),
            mp_theory.trace_limit_inv(spec, gamma, 2),
            d,
            args.sigma0_sq * (args.gamma0 / gamma - 1.0) * d,
            mp_theory.s_bar(spec, gamma, args.gamma0, args.sigma0_sq),
        ]
        lines.append(",".join(fmt_num(v) for v in row))
    _write_lines(args.out, lines)
    return EXIT_OK


def _read_truth(path: str):
    """Truth CSV: columns beta, sigma0_sq (sigma0_sq constant down the rows)."""
    try:
        raw = Path(path).read_text().strip().splitlines()
    except OSError as exc:
        raise ValueError(f"cannot read {path}: {exc}") from exc
    if not raw:
        raise ValueError(f"{path} is empty")
    header = [h.strip() for h in raw[0].split(",")]
    if "beta" not in header or "sigma0_sq" not in header:
        raise ValueError(f"{path} must have a header row naming 'beta' and 'sigma0_sq' columns")
    bcol, scol = header.index("beta"), header.index("sigma0_sq")
    beta, sigmas = [], []
    for lineno, line in enumerate(raw[1:], start=2):
        cells = line.split(",")
        try:
            beta.append(float(cells[bcol]))
            if cells[scol].strip():
                sigmas.append(float(cells[scol]))
        except (IndexError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: bad truth row {line!r}") from exc
    if not sigmas:
        raise ValueError(f"{path} never specifies sigma0_sq")
    if len(set(sigmas)) != 1:
        raise ValueError(f"{path} gives conflicting sigma0_sq values {sorted(set(sigmas))}")
    return np.array(beta), sigmas[0]


def cmd_diagnose(args) -> int:
    Z = _read_matrix(args.matrix, args.header)
    y = _read_vector(args.response, args.header)
    n, p = Z.shape
    if y.shape[0] != n:
        raise ValueError(f"design has n = {n} rows but response has {y.shape[0]}")
    beta, sigma0_sq = _read_truth(args.truth)
    if beta.shape[0] != p:
        raise ValueError(f"truth file has {beta.shape[0]} beta entries but the design has p = {p}")
    params = snr_single.TrueParameters.from_beta(beta, sigma0_sq)
    grid = _parse_grid(args.gamma_grid)
    if np.any(grid <= 0.0):
        raise ValueError("diagnose gamma grid values must be positive")
    cache = spectral_core.decompose(Z)
    ry = spectral_core.rotate_response(cache, y)
    spec = mp_theory.MpSpec.from_tau(n / p)
    lines = [",".join(DIAGNOSE_CSV_COLUMNS)]
    for gamma in grid:
        row = [
            gamma,
            snr_single.delta(cache, ry, gamma),
            snr_single.delta_star(Z, params, gamma, cache=cache),
            snr_single.delta_starstar(cache, params.gamma0, sigma0_sq, gamma),
            mp_theory.delta_limit(spec, gamma, params.gamma0, sigma0_sq),
        ]
        lines.append(",".join(fmt_num(v) for v in row))
    _write_lines(args.out, lines)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="remle",
        description="Random-effects MLE of SNR and noise variance for high-dimensional "
                    "linear models, with Marchenko-Pastur limit cross-checks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_fit_flags(p):
        p.add_argument("--tol", type=float, default=1e-8,
                       help="MM convergence tolerance on the log-likelihood change (default 1e-8; "
                            "use 1e-4 to reproduce the looser published setting)")
        p.add_argument("--max-iter", type=int, default=10000,
                       help="MM iteration cap (default 10000)")

    pe = sub.add_parser("estimate", help="fit gamma and noise variance from CSV data")
    pe.add_argument("matrix", help="design matrix CSV, one observation per row")
    pe.add_argument("response", help="response CSV, single column")
    pe.add_argument("--header", action="store_true", help="CSV inputs carry a header row")
    pe.add_argument("--groups", default="",
                    help="comma list p1,p2,... splitting the design columns into feature groups")
    pe.add_argument("--out", default=None, help="estimate CSV path (default stdout)")
    add_fit_flags(pe)
    pe.set_defaults(func=cmd_estimate)

    ps = sub.add_parser("simulate", help="run a seeded experiment from a TOML config")
    ps.add_argument("--config", required=True, help="experiment config (TOML)")
    ps.add_argument("--out", default=None,
                    help="output stem; writes <stem>.records.csv, <stem>.summary.csv, "
                         "<stem>.manifest.json (default: config path without suffix)")
    ps.add_argument("--seed", type=int, default=None, help="override the config base_seed")
    ps.add_argument("--threads", type=int, default=_default_threads(),
                    help="replication worker threads (default REMLE_THREADS or 1)")
    add_fit_flags(ps)
    ps.set_defaults(func=cmd_simulate)

    pt = sub.add_parser("theory", help="Marchenko-Pastur limit functionals over a gamma grid")
    pt.add_argument("--tau", type=float, required=True, help="aspect ratio lim n/p (> 0)")
    pt.add_argument("--gamma-grid", required=True,
                    help="comma list 'a,b,c' or range 'start:stop:count'")
    pt.add_argument("--gamma0", type=float, default=1.0, help="true SNR for c_gamma and s_bar")
    pt.add_argument("--sigma0-sq", type=float, default=1.0, help="true noise variance")
    pt.add_argument("--out", default=None, help="output CSV path (default stdout)")
    pt.set_defaults(func=cmd_theory)

    pd = sub.add_parser("diagnose",
                        help="delta / delta* / delta** / MP-limit curves for one dataset")
    pd.add_argument("matrix", help="design matrix CSV")
    pd.add_argument("response", help="response CSV, single column")
    pd.add_argument("--truth", required=True,
                    help="truth CSV with columns beta and sigma0_sq")
    pd.add_argument("--gamma-grid", required=True,
                    help="comma list 'a,b,c' or range 'start:stop:count'")
    pd.add_argument("--header", action="store_true", help="matrix/response CSVs carry a header row")
    pd.add_argument("--out", default=None, help="output CSV path (default stdout)")
    pd.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "tau", None) is not None and args.tau <= 0.0:
        parser.error("--tau must be positive")
    try:
        return args.func(args)
    except (ValueError, RemleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
