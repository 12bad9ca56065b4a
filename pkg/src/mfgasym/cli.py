"""Batch experiment runner.

Subcommands: profile, solve, asymptotics, sweep, check.  Configurations are
flat ``key = value`` files; see ``ExperimentConfig`` for the keys.  Exit
codes: 0 success, 2 configuration error, 3 non-convergence, 4 failed check
or internal error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import itertools
import json
import os
import sys
import traceback
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from mfgasym import __version__
from mfgasym.diagnostics import (
    displacement_convexity_check,
    energy_rate_check,
    free_boundary_rates,
    gradient_rate_check,
    hamiltonian_conservation,
    smoothing_check,
)
from mfgasym.lagrangian import extract_free_boundary
from mfgasym.profiles import DomainError, Params, Variant, alpha_of, eval_stationary_profile, make_profile
from mfgasym.rescaling import convergence_metrics, fit_exponential_rate, lyapunov, rescale
from mfgasym.solver import (
    ConfigurationError,
    Field,
    bump_datum,
    build_grid,
    self_similar_datum,
    solve_planning,
    solve_terminal_cost,
)

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED, EXIT_CHECK = 0, 2, 3, 4
WORKERS_ENV = "MFGASYM_WORKERS"
_SECTION = "experiment"


def _parse_float(text: str) -> float:
    # fractions such as 2/3 are accepted
    return float(Fraction(text.strip())) if "/" in text else float(text)


def _parse_list(text: str) -> list:
    return [_parse_float(s) for s in text.replace(";", ",").split(",") if s.strip()]


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


@dataclass(frozen=True)
class ExperimentConfig:
    """One run.  Dotted file keys map to underscores (``bump.a0`` -> ``bump_a0``).

    ``initial`` is ``bump`` (m0^theta proportional to (x - a0)(b0 - x)) or
    ``self_similar`` (the self-similar density at the start time ``t0``).
    Planning runs take the terminal density from ``terminal.kind``: the
    self-similar density at t0 + horizon or a bump on (terminal.a0, terminal.b0).
    ``kappa_T`` defaults to the self-similar value 1/(1 - alpha).
    """

    theta: float = 2.0
    mass: float = 1.0
    horizon: float = 1.0
    kappa_T: float | None = None
    variant: str = "terminal_cost"
    t0: float = 0.0
    initial: str = "bump"
    bump_a0: float = -1.0
    bump_b0: float = 1.0
    terminal_kind: str = "self_similar"
    terminal_a0: float = -1.0
    terminal_b0: float = 1.0
    terminal_mass: float | None = None
    nx: int = 1024
    domain_factor: float = 3.0
    cfl: float = 0.9
    half_width: float | None = None
    n_cells: int | None = None
    tol: float = 1e-10
    max_iter: int = 50
    method: str = "lagrangian"
    diagnostics_metrics: bool = True
    diagnostics_metrics_p: tuple = (1.0, float("inf"))
    diagnostics_metrics_samples: int = 25
    diagnostics_time_shift: float = 0.0
    diagnostics_lyapunov: bool = True
    diagnostics_lyapunov_window: tuple | None = None
    diagnostics_lyapunov_samples: int = 60
    diagnostics_eta_points: int = 2001
    diagnostics_rates: bool = True
    diagnostics_rate_window: tuple | None = None
    diagnostics_energy_eps: float = 0.5
    output_dir: str = "out"
    output_format: str = "csv"
    output_full_dumps: bool = False
    output_dump_every: int = 10

    def __post_init__(self):
        if self.kappa_T is None and isinstance(self.theta, (int, float)) and self.theta > 0:
            object.__setattr__(self, "kappa_T", 1.0 / (1.0 - alpha_of(self.theta)))
        if self.terminal_mass is None:
            object.__setattr__(self, "terminal_mass", self.mass)
        for name in ("diagnostics_metrics_p", "diagnostics_lyapunov_window",
                     "diagnostics_rate_window"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, tuple(float(x) for x in v))
        self.validate()

    def validate(self):
        def bad(name, why):
            raise ConfigurationError(f"{_file_key(name)}: {why}")

        if self.variant not in {v.value for v in Variant}:
            bad("variant", f"unknown variant {self.variant!r}")
        try:
            self.params()
        except DomainError as exc:
            raise ConfigurationError(f"params: {exc}") from None
        if self.variant == Variant.INFINITE_HORIZON.value:
            bad("variant", "infinite_horizon runs are not supported by the solvers")
        if self.initial not in ("bump", "self_similar"):
            bad("initial", f"expected bump or self_similar, got {self.initial!r}")
        if self.initial == "self_similar" and not self.t0 > 0:
            bad("t0", "self-similar initial data needs t0 > 0")
        if self.t0 < 0:
            bad("t0", "must be nonnegative")
        if not self.bump_b0 > self.bump_a0:
            bad("bump_b0", "must exceed bump.a0")
        if self.nx < 8:
            bad("nx", "at least 8 cells")
        if not 0 < self.cfl <= 0.9:
            bad("cfl", "must lie in (0, 0.9]")
        if not self.domain_factor > 0:
            bad("domain_factor", "must be positive")
        if not self.tol > 0 or self.max_iter < 1:
            bad("tol", "tol > 0 and max_iter >= 1 required")
        if self.method not in ("lagrangian", "fictitious_play"):
            bad("method", f"unknown method {self.method!r}")
        if self.variant == Variant.PLANNING.value:
            if self.terminal_kind not in ("self_similar", "bump"):
                bad("terminal_kind", f"expected self_similar or bump, got {self.terminal_kind!r}")
            if abs(self.terminal_mass - self.mass) > 1e-12 * self.mass:
                bad("terminal_mass", "compatibility condition violated: initial and terminal "
                    f"masses differ ({self.mass!r} vs {self.terminal_mass!r})")
        if not self.diagnostics_metrics_p or any(not p >= 1 for p in self.diagnostics_metrics_p):
            bad("diagnostics_metrics_p", "need values >= 1 (inf allowed)")
        if not 0 < self.diagnostics_energy_eps < 1:
            bad("diagnostics_energy_eps", "must lie in (0, 1)")
        for name in ("diagnostics_lyapunov_window", "diagnostics_rate_window"):
            w = getattr(self, name)
            if w is not None and (len(w) != 2 or not 0 < w[0] < w[1]):
                bad(name, "need two increasing positive times")
        if self.output_format not in ("csv", "npz"):
            bad("output_format", "csv or npz")
        if self.output_dump_every < 1:
            bad("output_dump_every", "must be >= 1")

    def params(self) -> Params:
        return Params(theta=self.theta, mass=self.mass, horizon=self.horizon,
                      kappa_T=self.kappa_T, variant=self.variant)

    @property
    def t1(self) -> float:
        return self.t0 + self.horizon

    def to_text(self) -> str:
        lines = [f"# mfgasym {__version__}"]
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            lines.append(f"{_file_key(f.name)} = {_fmt(v)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, overrides: dict | None = None) -> "ExperimentConfig":
        raw = _read_pairs(text)
        raw = {k: v for k, v in raw.items() if not k.startswith("sweep.")}
        raw.update(overrides or {})
        return cls(**_convert(raw))

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text())


_GROUPS = ("bump", "terminal", "diagnostics", "output")
_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _file_key(name: str) -> str:
    head, _, tail = name.partition("_")
    return f"{head}.{tail}" if head in _GROUPS and tail else name


def _attr_name(key: str) -> str:
    return key.replace(".", "_", 1)


def _read_pairs(text: str) -> dict:
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                   inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(f"[{_SECTION}]\n" + text)
    except configparser.Error as exc:
        raise ConfigurationError(f"unreadable config: {exc}") from None
    return dict(cp[_SECTION])


def _convert(raw: dict) -> dict:
    out = {}
    for key, text in raw.items():
        name = _attr_name(key)
        if name not in _TYPES:
            raise ConfigurationError(f"{key}: unknown key")
        typ = str(_TYPES[name])
        try:
            if text.strip().lower() == "none":
                out[name] = None
            elif typ.startswith("bool"):
                out[name] = _parse_bool(text)
            elif typ.startswith("int"):
                out[name] = int(text)
            elif typ.startswith("float"):
                out[name] = _parse_float(text)
            elif typ.startswith("tuple"):
                out[name] = tuple(_parse_list(text))
            else:
                out[name] = text.strip()
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigurationError(f"{key}: {exc}") from None
    return out


# ---------------------------------------------------------------- pipeline


@dataclass
class RunData:
    config: ExperimentConfig
    params: Params
    u: Field
    m: Field
    report: object
    center: float


def run_solve(cfg: ExperimentConfig) -> RunData:
    params = cfg.params()
    prof = make_profile(cfg.mass, cfg.theta)
    if cfg.initial == "bump":
        datum = bump_datum(cfg.bump_a0, cfg.bump_b0, cfg.mass, cfg.theta)
    else:
        datum = self_similar_datum(prof, cfg.t0)
    center = 0.5 * (datum.a + datum.b)
    grid = build_grid(params, (datum.a, datum.b), cfg.nx, t0=cfg.t0, t1=cfg.t1,
                      domain_factor=cfg.domain_factor, cfl=cfg.cfl, half_width=cfg.half_width)
    m0 = datum.cell_averages(grid)
    if cfg.variant == Variant.PLANNING.value:
        if cfg.terminal_kind == "self_similar":
            datum_T = self_similar_datum(make_profile(cfg.terminal_mass, cfg.theta), cfg.t1)
        else:
            datum_T = bump_datum(cfg.terminal_a0, cfg.terminal_b0, cfg.terminal_mass, cfg.theta)
        u, m, rep = solve_planning(m0, datum_T.cell_averages(grid), params, grid, tol=cfg.tol,
                                   max_iter=cfg.max_iter, method=cfg.method, datum=datum,
                                   datum_T=datum_T, n_cells=cfg.n_cells)
    else:
        u, m, rep = solve_terminal_cost(m0, params, grid, tol=cfg.tol, max_iter=cfg.max_iter,
                                        method=cfg.method, datum=datum, n_cells=cfg.n_cells)
    return RunData(cfg, params, u, m, rep, center)


def _dump_levels(n_levels: int, every: int, full: bool) -> np.ndarray:
    if full:
        return np.arange(n_levels)
    idx = np.arange(0, n_levels, every)
    return idx if idx[-1] == n_levels - 1 else np.append(idx, n_levels - 1)


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not serialisable: {type(v)}")


def _report_dict(report) -> dict:
    # wall time is left out so that outputs are reproducible bit for bit
    d = report.to_dict()
    d.pop("wall_time", None)
    return d


def write_solve_outputs(run: RunData, out: Path) -> dict:
    cfg = run.config
    out.mkdir(parents=True, exist_ok=True)
    g = run.m.grid
    levels = _dump_levels(g.nt + 1, cfg.output_dump_every, cfg.output_full_dumps)
    files = {}
    if cfg.output_format == "npz":
        files["fields"] = "fields.npz"
        np.savez(out / "fields.npz", t=g.times[levels], x=g.x, m=run.m.values[levels],
                 u=run.u.values[levels])
    else:
        for name, fld in (("density", run.m), ("value", run.u)):
            fname = f"{name}.csv"
            rows = ((g.times[n], x, v) for n in levels for x, v in zip(g.x, fld.values[n]))
            _write_csv(out / fname, ["t", "x", name], rows)
            files[name] = fname
    try:
        fb = extract_free_boundary(run.m, cfg.theta)
        _write_csv(out / "free_boundary.csv", ["t", "gamma_L", "gamma_R"],
                   zip(fb.t_samples, fb.gamma_L, fb.gamma_R))
        files["free_boundary"] = "free_boundary.csv"
    except DomainError as exc:
        warnings.warn(f"free boundary not extracted: {exc}", stacklevel=2)
    report = _report_dict(run.report)
    report["grid"] = {"nx": g.nx, "nt": g.nt, "dx": g.dx, "x_min": g.x_min, "x_max": g.x_max,
                      "t0": g.t0, "t1": g.t1}
    report["mass_drift"] = float(np.max(np.abs(run.m.mass() / run.m.mass()[0] - 1.0)))
    _write_json(out / "solve_report.json", report)
    files["solve_report"] = "solve_report.json"
    (out / "config.ini").write_text(cfg.to_text())
    files["config"] = "config.ini"
    return files


def _window(cfg, default):
    return default if cfg is None else tuple(cfg)


def run_asymptotics(run: RunData, out: Path) -> dict:
    """Rescale, Lyapunov trace, convergence metrics and rate fits; returns the summary."""
    cfg, params, u, m = run.config, run.params, run.u, run.m
    g = m.grid
    prof = make_profile(cfg.mass, cfg.theta)
    out.mkdir(parents=True, exist_ok=True)
    files, fits = {}, {}
    t_lo = max(g.t0, g.times[1]) if g.t0 == 0 else g.t0
    if cfg.diagnostics_lyapunov:
        lo, hi = _window(cfg.diagnostics_lyapunov_window, (max(t_lo, 0.05 * g.t1), 0.5 * g.t1))
        idx = np.flatnonzero((g.times >= lo - 1e-12) & (g.times <= hi + 1e-12))
        idx = idx[:: max(1, len(idx) // cfg.diagnostics_lyapunov_samples)]
        if len(idx) < 3:
            raise DomainError(f"Lyapunov window ({lo}, {hi}) holds fewer than 3 time levels")
        tau = np.log(g.times[idx])
        if run.center != 0:
            raise DomainError("the rescaling is about x = 0; centre the initial data there")
        h = prof.support_half_width
        eta = np.linspace(-1.5 * h, 1.5 * h, cfg.diagnostics_eta_points)
        state = rescale(u, m, params, tau, eta)
        tr = lyapunov(state, prof)
        cols = [tr.tau, tr.E, tr.dE_numeric, tr.dE_formula]
        header = ["tau", "E", "dE_numeric", "dE_formula"]
        if tr.f_critical is not None:
            cols.append(tr.f_critical)
            header.append("f_critical")
        _write_csv(out / "lyapunov.csv", header, zip(*cols))
        files["lyapunov"] = "lyapunov.csv"
        rel = np.abs(tr.dE_numeric - tr.dE_formula) / (np.abs(tr.dE_formula) + 1e-6)
        fits["lyapunov"] = {"median_relative_identity_error": float(np.median(rel[1:-1])),
                            "E_min": float(tr.E.min()), "E_max": float(tr.E.max())}
        if cfg.theta < 2 and params.variant != Variant.PLANNING:
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    k, r2 = fit_exponential_rate(tr, (tau[0], tau[-1]))
                fits["lyapunov"].update(k_fit=k, k_r_squared=r2,
                                        k_target=(2.0 - cfg.theta) / (2.0 + cfg.theta))
            except DomainError as exc:
                fits["lyapunov"]["k_fit_error"] = str(exc)
    if cfg.diagnostics_metrics:
        lo, hi = max(t_lo, 1e-12), g.t1
        ts = np.geomspace(lo, hi, cfg.diagnostics_metrics_samples)
        ts[0], ts[-1] = lo, hi
        for p in cfg.diagnostics_metrics_p:
            tab = convergence_metrics(m, u, prof, p, ts, cfg.diagnostics_time_shift, run.center)
            name = f"metrics_p{'inf' if np.isinf(p) else format(p, 'g')}.csv"
            _write_csv(out / name, ["t", "D1", "D2", "D3"], tab.rows())
            files[name[:-4]] = name
    if cfg.diagnostics_rates:
        default = (max(t_lo, 0.025 * g.t1), 0.5 * g.t1)
        window = _window(cfg.diagnostics_rate_window, default)
        rates = []
        for fn in (lambda: [smoothing_check(m, params, window)],
                   lambda: free_boundary_rates(extract_free_boundary(m, cfg.theta), params, window),
                   lambda: [gradient_rate_check(u, params, window, m=m)],
                   lambda: [energy_rate_check(m, params, cfg.diagnostics_energy_eps)]):
            try:
                rates.extend(f.to_dict() for f in fn())
            except DomainError as exc:
                rates.append({"error": str(exc)})
        fits["rates"] = rates
        conv = {}
        for p in (0.5, 2.0):
            rep = displacement_convexity_check(m, p, theta=cfg.theta)
            conv[format(p, "g")] = {"convex": rep.convex, "min_second_difference":
                                    rep.min_second_difference, "tolerance": rep.tolerance}
        fits["displacement_convexity"] = conv
        fits["hamiltonian_drift"] = hamiltonian_conservation(u, m, cfg.theta).drift
    _write_json(out / "rates.json", fits)
    files["rates"] = "rates.json"
    return {"files": files, "fits": fits}


def _summary(cfg, run, files, extra=None) -> dict:
    return {
        "version": __version__,
        "config": cfg.to_text(),
        "solve_report": _report_dict(run.report),
        "files": files,
        **(extra or {}),
    }


# ---------------------------------------------------------------- commands


def cmd_profile(args) -> int:
    try:
        prof = make_profile(args.mass, args.theta)
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = args.points if args.points % 2 else args.points + 1
    h = prof.support_half_width
    eta = np.linspace(-h, h, n)
    eta[n // 2] = 0.0
    M, U = eval_stationary_profile(eta, prof)
    U = -0.5 * prof.alpha * eta**2
    _write_csv(out / "profile.csv", ["eta", "M_a", "U_a"], zip(eta, M, U))
    _write_json(out / "profile.json", {"R_a": prof.R_a, "alpha": prof.alpha,
                                       "support_half_width": h, "theta": prof.theta,
                                       "mass": prof.mass, "version": __version__})
    print(json.dumps({"R_a": prof.R_a, "alpha": prof.alpha, "support_half_width": h}))
    return EXIT_OK


def _load(path) -> ExperimentConfig:
    try:
        return ExperimentConfig.from_file(path)
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc}") from None


def _context(exc) -> str:
    tb = traceback.extract_tb(exc.__traceback__)
    where = f" ({Path(tb[-1].filename).name}:{tb[-1].lineno})" if tb else ""
    return f"{exc}{where}"


def cmd_solve(args) -> int:
    cfg = _load(args.config)
    if args.full_dumps:
        cfg = replace(cfg, output_full_dumps=True)
    out = Path(args.out or cfg.output_dir)
    run = run_solve(cfg)
    files = write_solve_outputs(run, out)
    _write_json(out / "summary.json", _summary(cfg, run, files))
    if not run.report.converged:
        print("error: solver did not converge; report written", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_asymptotics(args) -> int:
    cfg = _load(args.config)
    out = Path(args.out or cfg.output_dir)
    run = run_solve(cfg)
    files = write_solve_outputs(run, out)
    try:
        res = run_asymptotics(run, out)
    except DomainError as exc:
        print(f"error: {_context(exc)}", file=sys.stderr)
        return EXIT_CHECK
    files.update(res["files"])
    _write_json(out / "summary.json", _summary(cfg, run, files, {"fits": res["fits"]}))
    return EXIT_OK if run.report.converged else EXIT_NONCONVERGED


def sweep_points(text: str) -> list:
    """Cartesian product of the ``sweep.<key>`` ranges, as config override dicts."""
    raw = _read_pairs(text)
    ranges = {k[len("sweep."):]: v for k, v in raw.items() if k.startswith("sweep.")}
    if not ranges:
        raise ConfigurationError("sweep: no sweep.<key> ranges given")
    axes = []
    for key, spec in ranges.items():
        vals = [s.strip() for s in spec.replace(";", ",").split(",") if s.strip()]
        if not vals:
            raise ConfigurationError(f"sweep.{key}: empty range")
        if _attr_name(key) not in _TYPES:
            raise ConfigurationError(f"sweep.{key}: unknown key")
        axes.append([(key, v) for v in vals])
    return [dict(combo) for combo in itertools.product(*axes)]


def _run_point(text: str, overrides: dict, out: str) -> dict:
    row = {k: v for k, v in overrides.items()}
    try:
        cfg = ExperimentConfig.from_text(text, overrides)
        a = alpha_of(cfg.theta)
        row.update(theta=cfg.theta, alpha=a, mass=cfg.mass, R_a=make_profile(cfg.mass, cfg.theta).R_a,
                   k_target=(2.0 - cfg.theta) / (2.0 + cfg.theta) if cfg.theta < 2 else float("nan"))
        run = run_solve(cfg)
        files = write_solve_outputs(run, Path(out))
        res = run_asymptotics(run, Path(out))
        files.update(res["files"])
        _write_json(Path(out) / "summary.json", _summary(cfg, run, files, {"fits": res["fits"]}))
        fits = res["fits"]
        row["k_fit"] = fits.get("lyapunov", {}).get("k_fit", float("nan"))
        for r in fits.get("rates", []):
            if "quantity" in r:
                row[f"exp_{r['quantity'].replace(' ', '_')}"] = r["exponent_fit"]
        row["converged"] = bool(run.report.converged)
        row["status"] = "ok" if run.report.converged else "not converged"
    except (DomainError, ConfigurationError) as exc:
        row["status"] = f"error: {exc}"
    return row


def _workers(flag) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigurationError(f"{WORKERS_ENV}={env!r} is not an integer") from None
    elif flag:
        n = flag
    else:
        n = min(4, os.cpu_count() or 1)
    if n < 1:
        raise ConfigurationError(f"worker count must be >= 1, got {n}")
    return n


_AGG_COLUMNS = ["point", "theta", "alpha", "mass", "R_a", "k_target", "k_fit", "exp_sup_m",
                "exp_gamma_R", "exp_dgamma_R", "exp_ddgamma_R", "exp_sup_u_x", "converged",
                "status"]


def cmd_sweep(args) -> int:
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read {args.config}: {exc}") from None
    points = sweep_points(text)
    base = ExperimentConfig.from_text(text)
    base_out = Path(args.out or base.output_dir)
    base_out.mkdir(parents=True, exist_ok=True)
    dirs = [str(base_out / f"point_{i:03d}") for i in range(len(points))]
    n = _workers(args.workers)
    if n == 1 or len(points) == 1:
        rows = [_run_point(text, p, d) for p, d in zip(points, dirs)]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            rows = list(pool.map(_run_point, [text] * len(points), points, dirs))
    for i, r in enumerate(rows):
        r["point"] = i
    extra = sorted({k for r in rows for k in r} - set(_AGG_COLUMNS))
    header = _AGG_COLUMNS + [k for k in extra if not k.startswith("exp_")] + \
        [k for k in extra if k.startswith("exp_")]
    with open(base_out / "aggregate.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, header, restval="", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    failed = [r for r in rows if r.get("status") != "ok"]
    for r in failed:
        print(f"point {r['point']}: {r['status']}", file=sys.stderr)
    return EXIT_OK if not failed else EXIT_CHECK


def invariant_checks(nx: int = 512) -> list:
    """Fast structural checks; returns (name, passed, detail) triples."""
    from mfgasym.profiles import compute_R_a
    from scipy import integrate

    out = []
    for th in (1.0, 2.0, 4.0):
        prof = make_profile(1.0, th)
        eta = np.linspace(-prof.support_half_width, prof.support_half_width, 20001)
        M, _ = eval_stationary_profile(eta, prof)
        err = abs(integrate.simpson(M, x=eta) - 1.0)
        out.append((f"profile mass theta={th:g}", err < 1e-3, f"|mass - 1| = {err:.2e}"))
    r1, r2 = compute_R_a(1.0, 2.0), compute_R_a(2.0, 2.0)
    out.append(("R_a scaling theta=2", abs(r2 / r1 - 2.0) < 1e-9, f"R(2)/R(1) = {r2 / r1!r}"))
    cfg = ExperimentConfig(theta=2.0, t0=1.0, horizon=3.0, initial="self_similar", nx=nx,
                           kappa_T=2.0, diagnostics_lyapunov=False)
    run = run_solve(cfg)
    prof = make_profile(1.0, 2.0)
    g = run.m.grid
    from mfgasym.profiles import self_similar_cell_averages
    err = max(np.sum(np.abs(run.m.values[n] - self_similar_cell_averages(g.edges, t, prof))) * g.dx
              for n, t in enumerate(g.times))
    out.append(("self-similar solve converged", bool(run.report.converged),
                f"{run.report.iterations} iterations"))
    out.append(("self-similar L1 error", err < 5e-3, f"max_t L1 = {err:.2e}"))
    drift = float(np.max(np.abs(run.m.mass() / run.m.mass()[0] - 1.0)))
    out.append(("mass conservation", drift < 1e-12, f"drift = {drift:.1e}"))
    hd = hamiltonian_conservation(run.u, run.m, 2.0).drift
    out.append(("Hamiltonian drift", hd < 1e-2, f"drift = {hd:.2e}"))
    conv = displacement_convexity_check(run.m, 2.0, theta=2.0)
    out.append(("displacement convexity p=2", conv.convex,
                f"min dd = {conv.min_second_difference:.2e}"))
    return out


def cmd_check(args) -> int:
    results = invariant_checks(args.nx)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        _write_json(Path(args.out) / "check.json",
                    [{"name": n, "passed": bool(ok), "detail": d} for n, ok, d in results])
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mfgasym", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"mfgasym {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("profile", help="stationary profile CSV and constants")
    p.add_argument("--theta", type=_parse_float, required=True)
    p.add_argument("--mass", type=_parse_float, required=True)
    p.add_argument("--points", type=int, default=401)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_profile)

    for name, func, hlp in (("solve", cmd_solve, "solve one configuration"),
                            ("asymptotics", cmd_asymptotics, "solve, rescale and diagnose")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("config")
        p.add_argument("--out")
        if name == "solve":
            p.add_argument("--full-dumps", action="store_true")
        p.set_defaults(func=func)

    p = sub.add_parser("sweep", help="run a parameter grid")
    p.add_argument("config")
    p.add_argument("--out")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("check", help="run the fast invariant suite")
    p.add_argument("--nx", type=int, default=512)
    p.add_argument("--out")
    p.set_defaults(func=cmd_check)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DomainError as exc:
        msg = str(exc)
        print(f"error: {_context(exc)}", file=sys.stderr)
        return EXIT_CONFIG if "compatibility" in msg else EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
