"""Monte Carlo studies over the method x q grid, one-shot estimation and inner benchmarks."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dgp import (
    EntryExitSpec,
    EntryGameSpec,
    SieveInitConfig,
    build_entry_exit_model,
    build_entry_game_model,
    frequency_ccp,
    sieve_logit_init,
    simulate_panel,
    solve_true_ccps,
)
from .errors import ConfigError, SingularSystemError
from .estimator import (
    METHODS,
    EstimationState,
    match_labels,
    multi_start,
    run_method,
    standard_errors_linear,
)
from .linalg import INF, is_infinite
from .panel import PanelData

log = logging.getLogger(__name__)

DESIGNS = ("entry_exit_FD", "entry_exit_NFD", "entry_game")
WORKERS_ENV = "DDCMIX_WORKERS"


def parse_q(value):
    """Accept integers and the infinity sentinel (``"inf"``, ``"∞"``, ``null``)."""
    if value is None or (isinstance(value, str) and value.strip().lower() in ("inf", "infinity", "∞")):
        return INF
    if isinstance(value, float) and is_infinite(value):
        return INF
    try:
        q = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"q must be a positive integer or 'inf', got {value!r}") from None
    if q < 1 or q != float(value):
        raise ConfigError(f"q must be a positive integer or 'inf', got {value!r}")
    return q


def q_label(q) -> str:
    return "inf" if is_infinite(q) else str(int(q))


@dataclass
class StudyConfig:
    design: str = "entry_exit_FD"
    overrides: dict = field(default_factory=dict)
    methods: list = field(default_factory=lambda: ["PV_GMRES"])
    q_values: list = field(default_factory=lambda: [4])
    replications: int = 1
    seed: int = 0
    eps_outer: float = 1e-3
    inner_tol: float = 1e-8
    max_outer: int = 100
    ccp_update: str | None = None
    init: dict = field(default_factory=dict)
    output_dir: str = "results"
    workers: int | None = None
    mse_includes_nonconverged: bool = True

    def __post_init__(self):
        if self.design not in DESIGNS:
            raise ConfigError(f"design must be one of {DESIGNS}, got {self.design!r}")
        if not self.methods:
            raise ConfigError("method list is empty")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {sorted(METHODS)}")
        if "EE_SA" in self.methods and self.design != "entry_exit_FD":
            raise ConfigError("EE_SA needs finite dependence: use design entry_exit_FD")
        if any(m.endswith("EPL_GMRES") for m in self.methods) and self.design != "entry_game":
            raise ConfigError("EPL methods are available for the entry_game design")
        if not self.q_values:
            raise ConfigError("q list is empty")
        self.q_values = [parse_q(q) for q in self.q_values]
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if self.eps_outer <= 0 or self.inner_tol <= 0:
            raise ConfigError("tolerances must be positive")
        if self.ccp_update not in (None, "plain", "spectral"):
            raise ConfigError("ccp_update must be 'plain' or 'spectral'")

    @classmethod
    def from_dict(cls, data: dict) -> "StudyConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["q_values"] = [q_label(q) if is_infinite(q) else int(q) for q in self.q_values]
        return out


def load_config(path) -> StudyConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"configuration file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return StudyConfig.from_dict(data)


# ------------------------------------------------------------------ designs


@dataclass
class Design:
    model: object
    spec: object
    true_ccps: np.ndarray
    theta_true: np.ndarray
    pi_true: np.ndarray

    @property
    def is_game(self) -> bool:
        return self.model.n_firms > 1


def _spec_kwargs(cls, overrides):
    names = {f.name for f in dataclasses.fields(cls)}
    bad = set(overrides) - names
    if bad:
        raise ConfigError(f"unknown design overrides for {cls.__name__}: {sorted(bad)}")
    out = dict(overrides)
    for key in ("type_params", "type_weights", "fixed_costs", "size_transition"):
        if key in out and out[key] is not None:
            out[key] = tuple(tuple(r) if isinstance(r, list) else r for r in out[key])
    return out


def build_design(design: str, overrides: dict | None = None) -> Design:
    overrides = overrides or {}
    if design.startswith("entry_exit"):
        dep = design.rsplit("_", 1)[1]
        spec = EntryExitSpec(dependence=dep, **_spec_kwargs(EntryExitSpec, overrides))
        model = build_entry_exit_model(spec)
    elif design == "entry_game":
        spec = EntryGameSpec(**_spec_kwargs(EntryGameSpec, overrides))
        model = build_entry_game_model(spec)
    else:
        raise ConfigError(f"unknown design {design!r}")
    P = solve_true_ccps(model)
    return Design(model, spec, P, model.type_params.copy(), model.type_weights.copy())


def replication_seed(master: int, rep: int) -> int:
    """Seed for replication ``rep``; a pure function of both arguments."""
    return int(np.random.SeedSequence([int(master), int(rep)]).generate_state(1, np.uint64)[0] >> np.uint64(1))


def initial_state(design: Design, data: PanelData, init: dict, seed: int) -> EstimationState:
    """Frequency CCPs for single-type designs, sieve-logit EM otherwise."""
    model = design.model
    n_types = int(init.get("n_types", model.n_types))
    kind = init.get("kind", "frequency" if n_types == 1 else "sieve")
    if kind == "frequency":
        if n_types != 1:
            raise ConfigError("frequency initialization supports a single type")
        return EstimationState(frequency_ccp(data, model, init.get("smoothing", 0.5))[None], np.ones(1))
    if kind != "sieve":
        raise ConfigError(f"init kind must be 'frequency' or 'sieve', got {kind!r}")
    keys = {f.name for f in dataclasses.fields(SieveInitConfig)}
    cfg = SieveInitConfig(n_types=n_types, **{k: v for k, v in init.items() if k in keys and k != "n_types"})
    P0, pi0 = sieve_logit_init(data, model, cfg, seed)
    return EstimationState(P0, pi0)


# ------------------------------------------------------------------ studies


@dataclass
class MethodCell:
    method: str
    q: object
    ct_mean: float
    ct_sd: float
    mse: float
    avg_iter: float
    conv_pct: float
    records: list = field(default_factory=list)

    def row(self) -> dict:
        return {
            "method": self.method, "q": q_label(self.q), "ct_mean": self.ct_mean, "ct_sd": self.ct_sd,
            "mse": self.mse, "avg_iter": self.avg_iter, "conv_pct": self.conv_pct,
        }

    def to_dict(self) -> dict:
        return {**self.row(), "records": self.records}

    @classmethod
    def from_dict(cls, d) -> "MethodCell":
        return cls(d["method"], parse_q(d["q"]), d["ct_mean"], d["ct_sd"], d["mse"], d["avg_iter"],
                   d["conv_pct"], d.get("records", []))


def run_replication(config: StudyConfig, rep: int, design: Design | None = None) -> list:
    """Simulate one panel and run every (method, q) cell on it."""
    design = design or build_design(config.design, config.overrides)
    spec = design.spec
    seed = replication_seed(config.seed, rep)
    data = simulate_panel(design.model, design.true_ccps, design.pi_true, spec.n_markets, spec.n_periods,
                          seed, spec.burn_in)
    init = initial_state(design, data, config.init, seed)
    ccp_update = config.ccp_update or ("spectral" if design.is_game else "plain")
    records = []
    for method in config.methods:
        for q in config.q_values:
            try:
                res = run_method(design.model, data, init, method, q, config.eps_outer, config.max_outer,
                                 config.inner_tol, ccp_update)
                theta, pi = res.theta, res.pi
                perm, mse = match_labels(theta, pi, design.theta_true, design.pi_true)
                rec = {
                    "rep": rep, "method": method, "q": q_label(q), "ct": res.wall_time, "mse": mse,
                    "n_outer": res.n_outer, "converged": bool(res.converged),
                    "theta": theta[perm].tolist(), "pi": pi[perm].tolist(), "message": res.message,
                }
            except Exception as exc:  # a failed replication never aborts the study
                log.warning("rep %d %s q=%s failed: %s", rep, method, q_label(q), exc)
                rec = {"rep": rep, "method": method, "q": q_label(q), "ct": float("nan"), "mse": float("nan"),
                       "n_outer": 0, "converged": False, "theta": None, "pi": None, "message": str(exc)}
            records.append(rec)
    return records


def _worker_count(config: StudyConfig) -> int:
    if config.workers is not None:
        return max(1, int(config.workers))
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    return 1


def _run_rep_job(args):
    config_dict, rep = args
    return run_replication(StudyConfig.from_dict(config_dict), rep)


def _finite_mean(x: np.ndarray) -> float:
    x = x[~np.isnan(x)]
    return float(x.mean()) if x.size else float("nan")


def _finite_sd(x: np.ndarray) -> float:
    x = x[~np.isnan(x)]
    return float(x.std(ddof=1)) if x.size > 1 else 0.0


def aggregate(config: StudyConfig, records: list) -> list:
    """Deterministic reduction of replication records into cells."""
    cells = []
    for method in config.methods:
        for q in config.q_values:
            recs = sorted((r for r in records if r["method"] == method and r["q"] == q_label(q)),
                          key=lambda r: r["rep"])
            ct = np.array([r["ct"] for r in recs], dtype=np.float64)
            conv = np.array([r["converged"] for r in recs], dtype=bool)
            mse_recs = recs if config.mse_includes_nonconverged else [r for r, c in zip(recs, conv) if c]
            mse = np.array([r["mse"] for r in mse_recs], dtype=np.float64)
            cells.append(MethodCell(
                method, q,
                _finite_mean(ct),
                _finite_sd(ct),
                _finite_mean(mse),
                float(np.mean([r["n_outer"] for r in recs])) if recs else float("nan"),
                100.0 * float(conv.mean()) if conv.size else 0.0,
                recs,
            ))
    return cells


def run_study(config: StudyConfig) -> list:
    """Run all replications (in a process pool when workers > 1) and aggregate."""
    workers = _worker_count(config)
    reps = range(config.replications)
    if workers == 1:
        design = build_design(config.design, config.overrides)
        chunks = [run_replication(config, r, design) for r in reps]
    else:
        cfg = config.to_dict()
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_rep_job, [(cfg, r) for r in reps]))
    records = [rec for chunk in chunks for rec in chunk]
    return aggregate(config, records)


def emit_tables(cells: list, output_dir, formats=("csv", "json"), stem: str = "results") -> list:
    """Write one row per (method, q); JSON also nests per-replication records."""
    if not cells:
        raise ConfigError("no cells to write")
    out = Path(output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    written = []
    for fmt in formats:
        path = out / f"{stem}.{fmt}"
        try:
            if fmt == "csv":
                with path.open("w", newline="") as fh:
                    w = csv.DictWriter(fh, fieldnames=list(cells[0].row()))
                    w.writeheader()
                    for c in cells:
                        w.writerow(c.row())
            elif fmt == "json":
                path.write_text(json.dumps([c.to_dict() for c in cells], indent=2, allow_nan=True))
            else:
                raise ConfigError(f"unknown table format {fmt!r}")
        except OSError as exc:
            raise ConfigError(f"cannot write {path}: {exc}") from None
        written.append(path)
    return written


def read_cells(path) -> list:
    return [MethodCell.from_dict(d) for d in json.loads(Path(path).read_text())]


# ------------------------------------------------------------------ one-shot estimation


def estimate_once(config: StudyConfig, panel_path, method: str | None = None, q=None, n_types=None,
                  n_starts: int = 1, report_path=None, seed: int = 0):
    """Estimate on a panel file; returns ``(result, report dict)``."""
    design = build_design(config.design, config.overrides)
    model = design.model
    data = PanelData.from_csv(panel_path)
    data.check_against(model.n_states, model.n_actions, model.n_firms)
    method = method or config.methods[0]
    q = parse_q(q) if q is not None else config.q_values[0]
    init_cfg = dict(config.init)
    if n_types is not None:
        init_cfg["n_types"] = int(n_types)
    inits = []
    for s in range(max(1, n_starts)):
        cfg = dict(init_cfg)
        if s > 0:
            cfg["mode"] = "random"
        inits.append(initial_state(design, data, cfg, seed + s))
    ccp_update = config.ccp_update or ("spectral" if design.is_game else "plain")
    res = multi_start(model, data, inits, method, q, eps_outer=config.eps_outer, max_outer=config.max_outer,
                      tol=config.inner_tol, ccp_update=ccp_update)
    report = {"panel": str(panel_path), "design": config.design, **res.summary(),
              "param_names": list(model.param_names), "trace": res.trace}
    if model.linear:
        try:
            se_theta, se_pi, _ = standard_errors_linear(model, data, res.theta, res.pi, res.P)
            report["se_theta"] = se_theta.tolist()
            report["se_pi"] = se_pi.tolist()
        except SingularSystemError as exc:
            report["se_error"] = str(exc)
    if report_path is not None:
        Path(report_path).write_text(json.dumps(report, indent=2, allow_nan=True))
    return res, report


def simulate_from_config(config: StudyConfig, output, seed: int | None = None, include_types: bool = True):
    design = build_design(config.design, config.overrides)
    spec = design.spec
    s = spec.seed if seed is None else seed
    data = simulate_panel(design.model, design.true_ccps, design.pi_true, spec.n_markets, spec.n_periods, s,
                          spec.burn_in)
    data.to_csv(output, include_types)
    return data


# ------------------------------------------------------------------ inner-solver benchmark


def bench_inner(config: StudyConfig, q_values=None, repeats: int = 3) -> list:
    """Time each inner algorithm on the nuisance systems at the true CCPs.

    Rows report the wall time of ``Gamma^q`` from a zero start and the
    residual it leaves, for every representation the design supports.
    """
    from .nuisance import make_block

    design = build_design(config.design, config.overrides)
    model = design.model
    P = design.true_ccps[0]
    theta = design.theta_true[0]
    qs = [parse_q(q) for q in (q_values or config.q_values)]
    combos = [("PV", "GMRES"), ("PV", "SA"), ("BM", "SA"), ("BM", "Anderson"), ("BM", "Newton")]
    if config.design == "entry_exit_FD":
        combos.append(("EE", "SA"))
    rows = []
    for rep_name, alg in combos:
        block = make_block(model, rep_name, alg, config.inner_tol)
        ctx = block.prepare(P)
        for q in qs:
            times = []
            for _ in range(repeats):
                t0 = time.perf_counter()
                if block.separable:
                    Y, report = block.solve(ctx, block.initial(ctx), q)
                else:
                    Y, _, report = block.solve(ctx, theta, block.initial(ctx), q, tangent=False)
                times.append(time.perf_counter() - t0)
            rows.append({"representation": rep_name, "algorithm": alg, "q": q_label(q),
                         "seconds": float(np.median(times)), "iterations": int(report.iterations_used),
                         "residual": float(report.final_residual_norm)})
    return rows
