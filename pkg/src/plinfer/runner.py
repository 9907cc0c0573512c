"""Experiment orchestration: configs, references, runs, sweeps and aggregate tables."""

from __future__ import annotations

import copy
import itertools
import logging
import math
import os
import time
import traceback
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .abc import AbcConfig, pmc_abc_run, smc_abc_run
from .core import RngStream
from .evaluation import (
    EvalReport,
    draw_in_support,
    furuta_sync_error,
    gaussian_location_reference,
    gmm_task_grid_posterior,
    posterior_predictive_check,
    posterior_sample_metrics,
)
from .ipm import MmdConfig, MmdMetric, SinkhornConfig, WassersteinMetric
from .pli import PliConfig, pli_run
from .simulators import TASKS, TaskSpec, get_task
from .simulators.furuta import furuta_initial_states
from .textio import (
    METRIC_COLUMNS,
    append_metrics_row,
    load_array,
    read_metrics,
    save_array,
    save_json,
    save_model,
    write_table,
)

log = logging.getLogger(__name__)

METHODS = ("mmd-pli", "w-pli", "mmd-abc-smc", "w-abc-smc", "mmd-abc-pmc", "w-abc-pmc")
OUTPUT_ENV = "PLINFER_OUT"
REPORT_METRICS = METRIC_COLUMNS[6:]


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


def load_profile(name: str) -> dict:
    text = resources.files("plinfer").joinpath("configs", f"{name}.yaml").read_text()
    return yaml.safe_load(text) or {}


def merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def set_dotted(cfg: dict, assignment: str):
    """Apply ``a.b=value`` with the value parsed as YAML."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not key=value")
    key, raw = assignment.split("=", 1)
    node = cfg
    parts = key.strip().split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r} descends into a non-section")
    node[parts[-1]] = yaml.safe_load(raw)


def load_config(path=None, profile: str | None = None, overrides=()) -> dict:
    """Desk profile, then an optional named profile, then a file, then ``key=value`` overrides.

    A config file may name its own base with ``profile: full``.
    """
    cfg = load_profile("desk")
    user = {}
    if path is not None:
        try:
            user = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a mapping")
    profile = profile or user.pop("profile", None)
    if profile and profile != "desk":
        try:
            cfg = merge(cfg, load_profile(profile))
        except FileNotFoundError:
            raise ConfigError(f"unknown profile {profile!r}") from None
    cfg = merge(cfg, user)
    for assignment in overrides:
        set_dotted(cfg, assignment)
    return cfg


@dataclass(frozen=True)
class RunConfig:
    task: str
    method: str
    n_obs: int
    sims_per_param: int
    seed: int
    raw: dict

    @property
    def metric_name(self) -> str:
        return self.method.split("-", 1)[0]

    @property
    def family(self) -> str:
        return self.method.split("-", 1)[1]


def validate(cfg: dict) -> RunConfig:
    task = cfg.get("task")
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}; known: {sorted(TASKS)}")
    method = cfg.get("method")
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; known: {list(METHODS)}")
    try:
        n_obs = int(cfg.get("n_obs"))
        seed = int(cfg.get("seed"))
        M = cfg.get("sims_per_param")
        M = n_obs if M is None else int(M)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"n_obs, seed and sims_per_param must be integers: {exc}") from None
    if n_obs < 1 or M < 1:
        raise ConfigError("n_obs and sims_per_param must be at least 1")
    if method.startswith("mmd") and (n_obs < 2 or M < 2):
        raise ConfigError("the unbiased MMD needs at least two reference and two simulated observations")
    try:
        build_task(cfg)
        _pli_config(cfg, task, n_obs)
        acfg = _abc_config(cfg, n_obs)
        if method.endswith("pmc") and math.ceil(acfg.alpha * acfg.particles - 1e-9) < 2:
            raise ValueError("PMC needs alpha * particles >= 2")
        MmdConfig(tuple(cfg["mmd"]["bandwidths"]))
        SinkhornConfig(**cfg["sinkhorn"])
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None
    return RunConfig(task, method, n_obs, M, seed, cfg)


def build_task(cfg: dict) -> TaskSpec:
    return get_task(cfg["task"], **(cfg.get("task_options") or {}))


def _pli_config(cfg, task_name, n_obs) -> PliConfig:
    p = cfg["pli"]
    estimator = p["estimator"]
    if estimator == "auto":
        estimator = cfg.get("estimators", {}).get(task_name, "gaussian")
    return PliConfig(
        epsilon=float(p["epsilon"]),
        base_bandwidth=None if p.get("base_bandwidth") is None else float(p["base_bandwidth"]),
        eta_bounds=(float(p["eta_min"]), float(p["eta_max"])),
        iterations=int(p["iterations"]),
        samples_per_iter=int(p["samples_per_iter"]),
        sims_per_param=cfg.get("sims_per_param"),
        estimator=estimator,
        gmm_components=int(p["gmm_components"]),
        max_evals=int(p["max_evals"]),
        log_eta_tol=float(p["log_eta_tol"]),
        threads=int(cfg.get("threads", 1)),
    )


def _abc_config(cfg, n_obs) -> AbcConfig:
    a = cfg["abc"]
    return AbcConfig(
        particles=int(a["particles"]),
        iterations=int(a["iterations"]),
        alpha=float(a["alpha"]),
        resample_threshold=a.get("resample_threshold"),
        kernel_components=int(a["kernel_components"]),
        covariance_scale=float(a["covariance_scale"]),
        sims_per_param=cfg.get("sims_per_param"),
        threads=int(cfg.get("threads", 1)),
    )


def _metric(cfg, name):
    if name == "mmd":
        return MmdMetric(MmdConfig(tuple(cfg["mmd"]["bandwidths"])))
    return WassersteinMetric(SinkhornConfig(**cfg["sinkhorn"]))


def output_root(cli_out=None) -> Path:
    if cli_out is not None:
        return Path(cli_out)
    return Path(os.environ.get(OUTPUT_ENV, "runs"))


# ---------------------------------------------------------------------------
# reference data


def reference_paths(root: Path, task: str, n_obs: int, seed: int):
    base = Path(root) / "references" / f"{task}_N{n_obs}_seed{seed}"
    return base.with_suffix(".csv"), base.with_name(base.name + "_states.csv")


def generate_reference(task: TaskSpec, n_obs: int, seed: int, root=None):
    """Simulate ``n_obs`` observations at the ground truth; Furuta also returns initial states.

    With ``root`` the arrays are written under ``root/references``.
    """
    rng = RngStream(seed).split("reference").split(task.name).split(n_obs)
    states = None
    if task.name == "furuta":
        cfg = task.options["config"]
        states = furuta_initial_states(n_obs, rng.split(0).generator(), cfg)
        obs = task.transform(task.ground_truth[None], states[None])[0]
    else:
        obs = task.simulate(task.ground_truth, n_obs, rng)
    if root is not None:
        obs_path, states_path = reference_paths(root, task.name, n_obs, seed)
        save_array(obs_path, obs)
        if states is not None:
            save_array(states_path, states, ["theta_r", "theta_p", "dtheta_r", "dtheta_p"])
    return obs, states


def load_or_generate_reference(task: TaskSpec, n_obs: int, seed: int, root: Path):
    obs_path, states_path = reference_paths(root, task.name, n_obs, seed)
    if not obs_path.exists() or (task.name == "furuta" and not states_path.exists()):
        generate_reference(task, n_obs, seed, root)
    obs = load_array(obs_path)
    states = load_array(states_path) if task.name == "furuta" else None
    return obs, states


# ---------------------------------------------------------------------------
# a single run


def run_dir(root: Path, rc: RunConfig) -> Path:
    return Path(root) / rc.task / rc.method / f"N{rc.n_obs}_M{rc.sims_per_param}_seed{rc.seed}"


def execute_method(rc: RunConfig, task: TaskSpec, reference, rng: RngStream, on_iteration=None):
    """Run the configured method; returns ``(posterior_model, iteration_count, summaries)``."""
    cfg = rc.raw
    metric = _metric(cfg, rc.metric_name)
    summaries = []

    def record(state):
        summaries.append(state.summary())
        if on_iteration is not None:
            on_iteration(state)

    if rc.family == "pli":
        pcfg = _pli_config(cfg, rc.task, rc.n_obs)
        model, states = pli_run(task, reference, metric, pcfg, rng, callback=record)
        return model, len(states), summaries
    acfg = _abc_config(cfg, rc.n_obs)
    runner = smc_abc_run if rc.family == "abc-smc" else pmc_abc_run
    pop = runner(task, reference, metric, acfg, rng, callback=record)
    return pop, acfg.iterations, summaries


def evaluate(rc: RunConfig, task: TaskSpec, model, reference, states, rng: RngStream):
    """Posterior samples and the report metrics for a finished run."""
    ev = rc.raw["evaluation"]
    count = int(ev["posterior_samples"])
    samples = draw_in_support(model, task.prior, count, rng.split("posterior"))
    eval_sinkhorn = SinkhornConfig(
        epsilon_scale=rc.raw["sinkhorn"]["epsilon_scale"],
        max_iters=int(ev["sinkhorn_max_iters"]),
        marginal_tol=rc.raw["sinkhorn"]["marginal_tol"],
    )
    mmd_cfg = MmdConfig(tuple(rc.raw["mmd"]["bandwidths"]))
    out = {}
    ref_samples = None
    if task.name == "gaussian_location":
        ref_samples = gaussian_location_reference(reference).sample(count, rng.split("reference-posterior"))
    elif task.name == "gmm":
        ref_samples = gmm_task_grid_posterior(reference).sample(count, rng.split("reference-posterior"))
    if ref_samples is not None:
        out["mmd2_posterior"], out["w2_posterior"] = posterior_sample_metrics(
            samples, ref_samples, mmd_cfg, eval_sinkhorn, ev.get("w2_subsample"), rng.split("w2"))
    out["ppc_mmd2"], out["ppc_w2"] = posterior_predictive_check(
        model, task, reference, int(ev["ppc_sims"]), rng.split("ppc"), M=rc.sims_per_param,
        pooled=bool(ev["ppc_pooled"]), mmd_cfg=mmd_cfg, sinkhorn_cfg=eval_sinkhorn)
    if task.name == "furuta":
        out["furuta_sync_error"] = furuta_sync_error(
            model, states, reference, int(ev["furuta_sync_sims"]), rng.split("sync"),
            task.options["config"], task.prior)
    return samples, out


def run(cfg: dict, root=None) -> dict:
    """Execute one configured run and persist its artifacts; returns the manifest.

    Failures are recorded in the manifest (status ``failed``) and re-raised.
    """
    rc = validate(cfg)
    root = output_root(root)
    task = build_task(cfg)
    directory = run_dir(root, rc)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "config.yaml").write_text(yaml.safe_dump(cfg, sort_keys=True))
    manifest = {
        "config": cfg,
        "code_version": __version__,
        "master_seed": rc.seed,
        "status": "running",
        "state_file": "states.csv",
    }
    start = time.perf_counter()
    try:
        reference, states = load_or_generate_reference(task, rc.n_obs, rc.seed, root)
        master = RngStream(rc.seed)
        model, n_iter, summaries = execute_method(rc, task, reference, master.split("run").split(rc.method))
        if summaries:
            cols = list(dict.fromkeys(k for row in summaries for k in row))
            write_table(directory / "states.csv", summaries, cols)
        if hasattr(model, "to_dict"):
            save_model(directory / "final_model.txt", model)
        else:
            save_array(directory / "final_particles.csv",
                       np.column_stack([model.particles, model.weights, model.scores]),
                       [f"xi{i}" for i in range(task.param_dim)] + ["weight", "score"])
        samples, metrics = evaluate(rc, task, model, reference, states, master.split("eval"))
        save_array(directory / "posterior_samples.csv", samples, [f"xi{i}" for i in range(task.param_dim)])
    except Exception as exc:
        manifest.update(status="failed", error="".join(traceback.format_exception_only(type(exc), exc)).strip(),
                        error_chain=_chain(exc), wall_seconds=time.perf_counter() - start)
        save_json(directory / "manifest.json", manifest)
        raise
    wall = time.perf_counter() - start
    report = EvalReport(task=rc.task, method=rc.method, N=rc.n_obs, M=rc.sims_per_param, seed=rc.seed,
                        iteration_count=n_iter, wall_seconds=wall, **metrics)
    append_metrics_row(root / "metrics.csv", report.as_row())
    manifest.update(status="completed", wall_seconds=wall, iteration_count=n_iter, metrics=report.as_row())
    save_json(directory / "manifest.json", manifest)
    return manifest


def _chain(exc):
    chain = []
    while exc is not None:
        chain.append(f"{type(exc).__name__}: {exc}")
        exc = exc.__cause__ or exc.__context__
    return chain


# ---------------------------------------------------------------------------
# sweeps and reports


def aggregate(rows, keys=("task", "method", "N"), metrics=REPORT_METRICS) -> list[dict]:
    """Per-cell mean and 95% normal-approximation half-width over seeds."""
    groups: dict = {}
    for row in rows:
        groups.setdefault(tuple(row[k] for k in keys), []).append(row)
    table = []
    for key in sorted(groups, key=lambda k: tuple((0, v, "") if isinstance(v, (int, float)) else (1, 0, str(v)) for v in k)):
        cell = groups[key]
        out = dict(zip(keys, key))
        out["seeds"] = len({r["seed"] for r in cell})
        for m in metrics:
            vals = np.array([r[m] for r in cell if r.get(m) is not None], dtype=float)
            if vals.size == 0:
                out[f"{m}_mean"], out[f"{m}_ci95"] = None, None
                continue
            out[f"{m}_mean"] = float(vals.mean())
            sd = float(vals.std(ddof=1)) if vals.size > 1 else math.nan
            out[f"{m}_ci95"] = 1.96 * sd / math.sqrt(vals.size)
        table.append(out)
    return table


def aggregate_columns(keys=("task", "method", "N"), metrics=REPORT_METRICS):
    cols = list(keys) + ["seeds"]
    for m in metrics:
        cols += [f"{m}_mean", f"{m}_ci95"]
    return cols


def grid_cells(grid: dict, base: dict | None = None):
    """Cartesian product of the grid axes; an absent axis takes the base config value.

    An empty grid (or any empty axis) has no cells.
    """
    if not grid:
        return []
    base = base or {}
    names = ("task", "method", "n_obs", "seed")
    values = []
    for name in names:
        v = grid.get(name, [base.get(name)])
        values.append(v if isinstance(v, list) else [v])
    return [dict(zip(names, combo)) for combo in itertools.product(*values)]


def sweep(base_cfg: dict, grid: dict, root=None, execute: bool = True):
    """Run (or only collect) every grid cell and aggregate the completed ones.

    Returns the aggregate table and the list of cells that have no metrics row.
    """
    root = output_root(root)
    cells = grid_cells(grid, base_cfg)
    for cell in cells:
        cfg = merge(base_cfg, cell)
        validate(cfg)
    if execute:
        done = {(r["task"], r["method"], r["N"], r["seed"]) for r in read_metrics(root / "metrics.csv")}
        for cell in cells:
            if (cell["task"], cell["method"], cell["n_obs"], cell["seed"]) in done:
                continue
            try:
                run(merge(base_cfg, cell), root)
            except Exception as exc:
                log.error("run %s failed: %s", cell, exc)
    rows = read_metrics(root / "metrics.csv")
    wanted = {(c["task"], c["method"], c["n_obs"], c["seed"]) for c in cells}
    # the newest row per cell wins when a cell was rerun
    latest = {}
    for r in rows:
        key = (r["task"], r["method"], r["N"], r["seed"])
        if key in wanted:
            latest[key] = r
    missing = sorted(wanted - set(latest), key=str)
    return aggregate(list(latest.values())), missing
