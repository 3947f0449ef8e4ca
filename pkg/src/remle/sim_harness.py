"""Seeded, replicated simulation experiments.

Data generation follows the standard benchmark recipe: designs with i.i.d.
N(0,1), i.i.d. Rademacher, or standardized Hardy-Weinberg genotype entries;
polynomially decaying coefficient vectors scaled to hit an exact target SNR;
Gaussian noise. Experiments sweep one configuration field over a grid and
repeat each point over seeded replications.

Reproducibility contract: every replication owns a Philox4x64 counter-based
stream keyed by SeedSequence(base_seed, spawn_key=(sweep_index, rep_index,
stream)), with stream 0 for the design and stream 1 for the noise. Records
are reduced in (sweep_index, rep_index) order, so output CSV bytes are
identical for any worker-thread count. Genotype column regeneration appends
(column, attempt) to the design key; fixed-design mode replaces the rep slot
with 2**31, outside the valid replication range.
"""

from __future__ import annotations

import json
import math
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from numpy.random import Generator, Philox, SeedSequence

from .errors import GenerationError
from . import snr_group, snr_single, spectral_core

DESIGN_KINDS = ("gaussian", "rademacher", "genotype")

# Designs whose entries are not symmetric random variables sit outside the
# symmetric sub-Gaussian consistency assumptions; their runs are labeled.
OUTSIDE_THEORY_KINDS = ("genotype",)

_FIXED_DESIGN_SLOT = 2**31
_GENOTYPE_RETRIES = 8

SINGLE_CSV_COLUMNS = (
    "seed", "n", "p", "g", "gamma0", "sigma0_sq",
    "gamma_hat", "sigma_eps_hat", "iterations", "converged",
)

SUMMARY_CSV_COLUMNS = (
    "sweep_index", "sweep_field", "sweep_value", "parameter",
    "mean", "sd", "q25", "q50", "q75", "convergence_rate", "replications",
)


def fmt_num(x) -> str:
    """CSV number formatting: %.15g (deterministic, round-trips to ~1e-15)."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.15g" % float(x)


@dataclass(frozen=True)
class SweepSpec:
    """One config field varied over a list of values."""

    field: str
    values: tuple


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of one experiment.

    p, g and gamma0 are scalars for a single design or equal-length lists
    for a grouped one (scalar g / gamma0 broadcast over groups).
    """

    design_kind: str
    n: int
    p: Union[int, tuple]
    g: Union[float, tuple]
    gamma0: Union[float, tuple]
    sigma0_sq: float
    replications: int
    base_seed: int
    sweep: Optional[SweepSpec] = None
    fix_design: bool = False

    def __post_init__(self):
        if self.design_kind not in DESIGN_KINDS:
            raise ValueError(
                f"design_kind must be one of {DESIGN_KINDS}, got {self.design_kind!r}"
            )
        if self.replications < 1:
            raise ValueError(f"replications must be >= 1, got {self.replications}")
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if self.sigma0_sq <= 0.0:
            raise ValueError(f"sigma0_sq must be positive, got {self.sigma0_sq}")
        if self.sweep is not None:
            vals = np.asarray(
                [v if np.ndim(v) else [v] for v in self.sweep.values], dtype=float
            )
            if not np.all(np.isfinite(vals)):
                raise ValueError(f"sweep values for {self.sweep.field!r} must be finite")

    @property
    def grouped(self) -> bool:
        return isinstance(self.p, tuple)

    def sweep_points(self) -> list:
        """Resolved per-point configs: [(sweep_value, point_config), ...]."""
        if self.sweep is None:
            return [(None, self)]
        out = []
        for value in self.sweep.values:
            fields = {
                "design_kind": self.design_kind, "n": self.n, "p": self.p,
                "g": self.g, "gamma0": self.gamma0, "sigma0_sq": self.sigma0_sq,
                "replications": self.replications, "base_seed": self.base_seed,
                "fix_design": self.fix_design,
            }
            if self.sweep.field not in fields:
                raise ValueError(f"unknown sweep field {self.sweep.field!r}")
            fields[self.sweep.field] = tuple(value) if isinstance(value, (list, tuple)) else value
            out.append((value, ExperimentConfig(**fields)))
        return out


@dataclass(frozen=True)
class ReplicationRecord:
    """Outcome of one (sweep point, replication) cell.

    seed is the uint64 root state of the replication's SeedSequence and,
    together with the config, pins the record bit-for-bit. wall_time is
    informational only and never serialized to the records CSV.
    """

    sweep_index: int
    rep_index: int
    seed: int
    n: int
    p: Union[int, tuple]
    g: Union[float, tuple]
    gamma0: Union[float, tuple]
    sigma0_sq: float
    gamma_hat: Union[float, tuple]
    sigma_eps_hat: float
    iterations: int
    converged: bool
    wall_time: float
    outside_theory: bool = False
    error: Optional[str] = None


def _as_group_tuple(value, s: int, name: str) -> tuple:
    if isinstance(value, (list, tuple, np.ndarray)):
        value = tuple(float(v) for v in value)
        if len(value) != s:
            raise ValueError(f"{name} has {len(value)} entries for {s} groups")
        return value
    return tuple(float(value) for _ in range(s))


def _rep_seed_sequence(base_seed: int, sweep_index: int, rep_index: int) -> SeedSequence:
    return SeedSequence(base_seed, spawn_key=(sweep_index, rep_index))


def gen_design(kind: str, n: int, p: int, seed) -> np.ndarray:
    """Draw one n×p design matrix.

    gaussian: i.i.d. N(0,1). rademacher: i.i.d. ±1 equiprobable. genotype:
    column j draws an allele frequency f_j ~ U[0.05, 0.5], entries take
    {0, 1, 2} with probabilities ((1-f_j)², 2f_j(1-f_j), f_j²), and the
    column is standardized to empirical mean 0 and variance 1. A genotype
    column with zero empirical variance is redrawn (new frequency and
    entries) under a derived sub-seed, up to 8 attempts.

    seed may be an int or a SeedSequence (the harness passes keyed
    sequences so parallel replications have independent streams).
    """
    if kind not in DESIGN_KINDS:
        raise ValueError(f"unknown design kind {kind!r}")
    if n < 1 or p < 1:
        raise ValueError(f"design dimensions must be >= 1, got {n} x {p}")
    ss = seed if isinstance(seed, SeedSequence) else SeedSequence(seed)
    rng = Generator(Philox(ss))
    if kind == "gaussian":
        return rng.standard_normal((n, p))
    if kind == "rademacher":
        return rng.integers(0, 2, size=(n, p)).astype(float) * 2.0 - 1.0

    freq = rng.uniform(0.05, 0.5, size=p)
    u = rng.random((n, p))
    Z = _genotype_from_uniform(u, freq)
    sd = Z.std(axis=0)
    for j in np.flatnonzero(sd == 0.0):
        for attempt in range(1, _GENOTYPE_RETRIES + 1):
            sub = SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + (int(j), attempt))
            sub_rng = Generator(Philox(sub))
            f_j = sub_rng.uniform(0.05, 0.5)
            col = _genotype_from_uniform(sub_rng.random((n, 1)), np.array([f_j]))[:, 0]
            if col.std() > 0.0:
                Z[:, j] = col
                break
        else:
            raise GenerationError(
                f"genotype column {j} stayed constant after {_GENOTYPE_RETRIES} regeneration attempts"
            )
    Z -= Z.mean(axis=0)
    Z /= Z.std(axis=0)
    return Z


def _genotype_from_uniform(u: np.ndarray, freq: np.ndarray) -> np.ndarray:
    """Map uniforms to {0,1,2} counts under Hardy-Weinberg probabilities."""
    t0 = (1.0 - freq) ** 2
    t1 = t0 + 2.0 * freq * (1.0 - freq)
    return (u >= t0).astype(float) + (u >= t1)


def gen_coefficients(p: int, g: float, gamma0: float, sigma0_sq: float,
                     permutation: Optional[np.ndarray] = None) -> np.ndarray:
    """Polynomially decaying coefficients with an exact SNR.

    β = p^{-1/2}·a·(1, 2^{-g}, ..., p^{-g}) with a = sqrt(γ₀σ₀²p / Σk^{-2g}),
    so ‖β‖² = γ₀σ₀² holds exactly. g = 0 gives flat coefficients; large g
    concentrates nearly all signal energy in the first coordinate. Passing a
    permutation reorders the entries (all downstream statistics depend on β
    only through quadratic forms, so the default keeps the decreasing order).
    """
    if g < 0.0:
        raise ValueError(f"decay exponent g must be >= 0, got {g}")
    if gamma0 <= 0.0 or sigma0_sq <= 0.0:
        raise ValueError(f"gamma0 and sigma0_sq must be positive, got {gamma0}, {sigma0_sq}")
    k = np.arange(1, p + 1, dtype=float)
    decay = k ** (-float(g))
    a = math.sqrt(gamma0 * sigma0_sq * p / float(np.sum(decay * decay)))
    beta = (a / math.sqrt(p)) * decay
    if permutation is not None:
        beta = beta[np.asarray(permutation, dtype=int)]
    return beta


def gen_response(designs, betas, sigma0_sq: float, seed) -> np.ndarray:
    """y = Σ_i Z_iβ_i + ε with ε i.i.d. N(0, σ₀²)."""
    if sigma0_sq < 0.0:
        raise ValueError(f"sigma0_sq must be nonnegative, got {sigma0_sq}")
    if isinstance(designs, np.ndarray):
        designs, betas = [designs], [betas]
    if len(designs) != len(betas):
        raise ValueError(f"{len(designs)} designs but {len(betas)} coefficient vectors")
    n = designs[0].shape[0]
    mean = np.zeros(n)
    for Z, b in zip(designs, betas):
        b = np.asarray(b, dtype=float)
        if Z.shape[0] != n or Z.shape[1] != b.shape[0]:
            raise ValueError(
                f"design block {Z.shape} does not match coefficient length {b.shape[0]} / n = {n}"
            )
        mean += Z @ b
    ss = seed if isinstance(seed, SeedSequence) else SeedSequence(seed)
    rng = Generator(Philox(ss))
    return mean + math.sqrt(sigma0_sq) * rng.standard_normal(n)


def materialize_replication(config: ExperimentConfig, sweep_index: int, rep_index: int):
    """Regenerate one replication's data: (designs, betas, y).

    designs/betas are lists (length 1 for the single-design case). This is
    the same derivation run_experiment uses, so external consumers can
    reproduce any record from (config, sweep_index, rep_index) alone.
    """
    point = config.sweep_points()[sweep_index][1]
    design_slot = _FIXED_DESIGN_SLOT if point.fix_design else rep_index
    if point.grouped:
        s = len(point.p)
        gs = _as_group_tuple(point.g, s, "g")
        g0s = _as_group_tuple(point.gamma0, s, "gamma0")
        designs = [
            gen_design(point.design_kind, point.n, int(point.p[i]),
                       SeedSequence(point.base_seed, spawn_key=(sweep_index, design_slot, 0, i)))
            for i in range(s)
        ]
        betas = [
            gen_coefficients(int(point.p[i]), gs[i], g0s[i], point.sigma0_sq)
            for i in range(s)
        ]
    else:
        designs = [
            gen_design(point.design_kind, point.n, int(point.p),
                       SeedSequence(point.base_seed, spawn_key=(sweep_index, design_slot, 0)))
        ]
        betas = [gen_coefficients(int(point.p), float(point.g), float(point.gamma0), point.sigma0_sq)]
    y = gen_response(designs, betas, point.sigma0_sq,
                     SeedSequence(point.base_seed, spawn_key=(sweep_index, rep_index, 1)))
    return designs, betas, y


def _run_one(config: ExperimentConfig, sweep_index: int, rep_index: int,
             tol: float, max_iter: int) -> ReplicationRecord:
    point = config.sweep_points()[sweep_index][1]
    seed = int(_rep_seed_sequence(point.base_seed, sweep_index, rep_index).generate_state(1, np.uint64)[0])
    start = time.perf_counter()
    common = dict(
        sweep_index=sweep_index, rep_index=rep_index, seed=seed,
        n=point.n, p=point.p, g=point.g, gamma0=point.gamma0,
        sigma0_sq=point.sigma0_sq,
        outside_theory=point.design_kind in OUTSIDE_THEORY_KINDS,
    )
    try:
        designs, betas, y = materialize_replication(config, sweep_index, rep_index)
        if point.grouped:
            design = snr_group.GroupedDesign.from_matrices(designs)
            est = snr_group.group_mm_fit(design, y, tol=tol, max_iter=max_iter)
            factor = snr_group.omega_factorize(design, 1.0, est.gamma_hat)
            sigma_eps_hat = float(y @ factor.solve(y)) / point.n
            gamma_hat = tuple(float(v) for v in est.gamma_hat)
        else:
            cache = spectral_core.decompose(designs[0])
            ry = spectral_core.rotate_response(cache, y)
            est = snr_single.mm_fit(cache, ry, tol=tol, max_iter=max_iter)
            sigma_eps_hat = snr_single.noise_variance(cache, ry, est.gamma_hat)
            gamma_hat = float(est.gamma_hat)
        return ReplicationRecord(
            gamma_hat=gamma_hat, sigma_eps_hat=sigma_eps_hat,
            iterations=est.iterations, converged=est.converged,
            wall_time=time.perf_counter() - start, **common,
        )
    except Exception as exc:  # individual failures never abort the sweep
        return ReplicationRecord(
            gamma_hat=math.nan, sigma_eps_hat=math.nan, iterations=0,
            converged=False, wall_time=time.perf_counter() - start,
            error=f"{type(exc).__name__}: {exc}", **common,
        )


def run_experiment(config: ExperimentConfig, tol: float = 1e-8,
                   max_iter: int = 10000, threads: int = 1) -> list:
    """Run every (sweep point × replication) cell and collect records.

    Deterministic for a fixed (config, base_seed) at any thread count: each
    cell owns its seeded streams and results are reduced in (sweep_index,
    rep_index) order.
    """
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    cells = [
        (si, ri)
        for si in range(len(config.sweep_points()))
        for ri in range(config.replications)
    ]
    if threads == 1:
        return [_run_one(config, si, ri, tol, max_iter) for si, ri in cells]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(_run_one, config, si, ri, tol, max_iter) for si, ri in cells]
        return [f.result() for f in futures]


def summarize(records: Sequence) -> list:
    """Per sweep point and parameter: mean, sd, quartiles, convergence rate.

    sd is the population form (ddof = 0), so a single record reports 0.
    Failed replications (error set) are excluded from the statistics but
    counted in the convergence rate denominator.
    """
    records = list(records)
    if not records:
        raise ValueError("no records to summarize")
    grouped = isinstance(records[0].p, tuple)
    rows = []
    for si in sorted({r.sweep_index for r in records}):
        cell = [r for r in records if r.sweep_index == si]
        ok = [r for r in cell if r.error is None]
        conv = sum(1 for r in cell if r.converged) / len(cell)
        params = {}
        if grouped:
            s = len(cell[0].p)
            for i in range(s):
                params[f"gamma_hat_{i + 1}"] = [r.gamma_hat[i] for r in ok]
            params["gamma_hat_total"] = [sum(r.gamma_hat) for r in ok]
        else:
            params["gamma_hat"] = [r.gamma_hat for r in ok]
        params["sigma_eps_hat"] = [r.sigma_eps_hat for r in ok]
        for name, values in params.items():
            v = np.asarray(values, dtype=float)
            if v.size:
                q25, q50, q75 = np.percentile(v, [25.0, 50.0, 75.0])
                mean, sd = float(v.mean()), float(v.std())
            else:
                mean = sd = q25 = q50 = q75 = math.nan
            rows.append({
                "sweep_index": si,
                "parameter": name,
                "mean": mean, "sd": sd,
                "q25": float(q25), "q50": float(q50), "q75": float(q75),
                "convergence_rate": conv,
                "replications": len(cell),
            })
    return rows


def _single_row(r: ReplicationRecord) -> list:
    return [
        fmt_num(r.seed), fmt_num(r.n), fmt_num(r.p), fmt_num(r.g),
        fmt_num(r.gamma0), fmt_num(r.sigma0_sq), fmt_num(r.gamma_hat),
        fmt_num(r.sigma_eps_hat), fmt_num(r.iterations), fmt_num(r.converged),
    ]


def group_csv_columns(s: int) -> list:
    cols = ["seed", "n"]
    cols += [f"p_{i + 1}" for i in range(s)]
    cols += [f"gamma0_{i + 1}" for i in range(s)]
    cols += [f"gamma_hat_{i + 1}" for i in range(s)]
    cols += ["gamma_hat_total", "sigma_eps_hat", "iterations", "converged"]
    return cols


def _group_row(r: ReplicationRecord) -> list:
    s = len(r.p)
    g0 = _as_group_tuple(r.gamma0, s, "gamma0")
    gh = r.gamma_hat if isinstance(r.gamma_hat, tuple) else tuple([math.nan] * s)
    row = [fmt_num(r.seed), fmt_num(r.n)]
    row += [fmt_num(p) for p in r.p]
    row += [fmt_num(v) for v in g0]
    row += [fmt_num(v) for v in gh]
    row += [fmt_num(sum(gh)), fmt_num(r.sigma_eps_hat), fmt_num(r.iterations), fmt_num(r.converged)]
    return row


def write_records_csv(records: Sequence, path) -> None:
    """Records CSV with the fixed column order (single or grouped schema)."""
    records = list(records)
    if not records:
        raise ValueError("no records to write")
    grouped = isinstance(records[0].p, tuple)
    lines = []
    if grouped:
        lines.append(",".join(group_csv_columns(len(records[0].p))))
        lines += [",".join(_group_row(r)) for r in records]
    else:
        lines.append(",".join(SINGLE_CSV_COLUMNS))
        lines += [",".join(_single_row(r)) for r in records]
    Path(path).write_text("\n".join(lines) + "\n")


def write_summary_csv(config: ExperimentConfig, rows: Sequence, path) -> None:
    sweep_field = config.sweep.field if config.sweep else ""
    points = config.sweep_points()
    lines = [",".join(SUMMARY_CSV_COLUMNS)]
    for row in rows:
        value = points[row["sweep_index"]][0]
        if isinstance(value, (list, tuple)):
            value_txt = ";".join(fmt_num(v) for v in value)
        elif value is None:
            value_txt = ""
        else:
            value_txt = fmt_num(value)
        lines.append(",".join([
            fmt_num(row["sweep_index"]), sweep_field, value_txt, row["parameter"],
            fmt_num(row["mean"]), fmt_num(row["sd"]), fmt_num(row["q25"]),
            fmt_num(row["q50"]), fmt_num(row["q75"]),
            fmt_num(row["convergence_rate"]), fmt_num(row["replications"]),
        ]))
    Path(path).write_text("\n".join(lines) + "\n")


def _build_id() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return "unknown"


def config_to_dict(config: ExperimentConfig) -> dict:
    d = {
        "design": config.design_kind,
        "n": config.n,
        "p": list(config.p) if config.grouped else config.p,
        "g": list(config.g) if isinstance(config.g, tuple) else config.g,
        "gamma0": list(config.gamma0) if isinstance(config.gamma0, tuple) else config.gamma0,
        "sigma0_sq": config.sigma0_sq,
        "replications": config.replications,
        "base_seed": config.base_seed,
        "fix_design": config.fix_design,
    }
    if config.sweep is not None:
        d["sweep"] = {
            "field": config.sweep.field,
            "values": [list(v) if isinstance(v, (list, tuple)) else v for v in config.sweep.values],
        }
    return d


def write_manifest(config: ExperimentConfig, records: Sequence, path) -> None:
    """JSON run manifest: config echo, build id, per-record seeds."""
    manifest = {
        "package": "remle 0.1.0",
        "build": _build_id(),
        "rng": "numpy Philox4x64 keyed by SeedSequence(base_seed, (sweep_index, rep_index, stream))",
        "config": config_to_dict(config),
        "outside_theory": config.design_kind in OUTSIDE_THEORY_KINDS,
        "record_seeds": [
            {"sweep_index": r.sweep_index, "rep_index": r.rep_index, "seed": r.seed}
            for r in records
        ],
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_config(path) -> ExperimentConfig:
    """Parse an experiment config from TOML (key-value + [sweep] section)."""
    import tomli

    raw = Path(path).read_bytes()
    try:
        data = tomli.loads(raw.decode("utf-8"))
    except tomli.TOMLDecodeError as exc:
        raise ValueError(f"config parse error in {path}: {exc}") from exc
    return config_from_dict(data, source=str(path))


def config_from_dict(data: dict, source: str = "<config>") -> ExperimentConfig:
    data = dict(data)
    sweep_raw = data.pop("sweep", None)
    required = ("design", "n", "p", "gamma0", "sigma0_sq", "replications", "base_seed")
    for key in required:
        if key not in data:
            raise ValueError(f"{source}: missing required field {key!r}")
    known = set(required) | {"g", "fix_design"}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"{source}: unknown field(s) {sorted(unknown)}")

    def tup(v):
        return tuple(float(x) for x in v) if isinstance(v, list) else v

    p = data["p"]
    p = tuple(int(x) for x in p) if isinstance(p, list) else int(p)
    g = tup(data.get("g", 0.0))
    gamma0 = tup(data["gamma0"])
    if isinstance(p, tuple):
        g = _as_group_tuple(g, len(p), "g")
        gamma0 = _as_group_tuple(gamma0, len(p), "gamma0")
    sweep = None
    if sweep_raw is not None:
        if "field" not in sweep_raw or "values" not in sweep_raw:
            raise ValueError(f"{source}: [sweep] needs 'field' and 'values'")
        sweep = SweepSpec(
            field=str(sweep_raw["field"]),
            values=tuple(
                tuple(v) if isinstance(v, list) else v for v in sweep_raw["values"]
            ),
        )
    try:
        return ExperimentConfig(
            design_kind=str(data["design"]),
            n=int(data["n"]), p=p, g=g, gamma0=gamma0,
            sigma0_sq=float(data["sigma0_sq"]),
            replications=int(data["replications"]),
            base_seed=int(data["base_seed"]),
            sweep=sweep,
            fix_design=bool(data.get("fix_design", False)),
        )
    except ValueError as exc:
        raise ValueError(f"{source}: {exc}") from exc
