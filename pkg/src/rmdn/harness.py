"""Multi-seed benchmark orchestration, model persistence, report rendering.

A benchmark runs three method arms per series: ``pretrained`` (zero-start
tanh nodes, masked gradients for the pretraining phase, then full training),
``plain`` (random initialization, full training only) and ``garch`` (the
maximum-likelihood baseline, fit once per series). Every (series, seed,
method) run draws its initialization from an independent stream derived by
hashing that tuple together with the meta seed, so arms never share
randomness by accident.

Divergence is a recorded outcome: runs that end in NaN or an unreasonable
log-likelihood are counted as NotConverged, and per-method averages use
converged runs only. Rendered reports contain no wall-clock data, so a
benchmark rerun with the same meta seed (at any worker count) reproduces
them byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .data import sample_seeds
from .garch import fit_garch
from .gradients import nonlinear_node_mask
from .network import RecurrentState, RmdnConfig, RmdnParams, _PARAM_FIELDS, init_params
from .optim import CONVERGED, TrainSchedule, classify_convergence, train

METHOD_PRETRAINED = "pretrained"
METHOD_PLAIN = "plain"
METHOD_GARCH = "garch"
RMDN_METHODS = (METHOD_PRETRAINED, METHOD_PLAIN)
ALL_METHODS = (METHOD_PRETRAINED, METHOD_PLAIN, METHOD_GARCH)

MODEL_SCHEMA_VERSION = 1


class ModelFileError(ValueError):
    """Raised when a model file is missing, malformed, or inconsistent."""


@dataclass
class RunRecord:
    """One training (or fitting) outcome."""

    series: str
    method: str
    seed: int | None
    loglik: float
    status: str
    epochs: int
    wall_time: float


@dataclass
class BenchmarkReport:
    """All run records plus the configuration that produced them."""

    records: list[RunRecord]
    config_echo: dict

    def series_names(self) -> list[str]:
        return sorted({r.series for r in self.records})

    def select(self, series: str, method: str) -> list[RunRecord]:
        return [r for r in self.records if r.series == series and r.method == method]

    def counts(self, series: str, method: str) -> tuple[int, int]:
        """(not converged, converged) run counts."""
        runs = self.select(series, method)
        conv = sum(1 for r in runs if r.status == CONVERGED)
        return len(runs) - conv, conv

    def average_loglik(self, series: str, method: str) -> float | None:
        """Mean log-likelihood over converged runs; None when there are none."""
        vals = [r.loglik for r in self.select(series, method) if r.status == CONVERGED]
        if not vals:
            return None
        return float(np.mean(vals))


def derive_run_seed(meta_seed: int, series_name: str, seed: int, method: str) -> int:
    """Stable per-run stream: hash of (meta seed, series, seed, method)."""
    key = f"{meta_seed}|{series_name}|{seed}|{method}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:4], "big")


def _run_task(task) -> RunRecord:
    series, config, schedule, meta_seed, seed, method = task
    start = time.perf_counter()
    if method == METHOD_GARCH:
        try:
            _, loglik = fit_garch(series)
        except Exception:
            loglik = math.nan
        return RunRecord(series.name, method, None, float(loglik),
                         classify_convergence(loglik), 0,
                         time.perf_counter() - start)

    run_seed = derive_run_seed(meta_seed, series.name, seed, method)
    if method == METHOD_PRETRAINED:
        params = init_params(config, run_seed, "pretrain")
        mask = nonlinear_node_mask(config)
        run_schedule = schedule
    else:
        params = init_params(config, run_seed, "plain")
        mask = None
        run_schedule = replace(schedule, pretrain_epochs=0)
    report = train(series, params, config, run_schedule, mask=mask)
    return RunRecord(series.name, method, seed, report.final_loglik, report.status,
                     report.epochs_completed, time.perf_counter() - start)


def run_benchmark(series_list, n_seeds: int, config: RmdnConfig | None = None,
                  schedule: TrainSchedule | None = None, meta_seed: int = 0,
                  workers: int = 1) -> BenchmarkReport:
    """Run all three arms over every series.

    Seeds are sampled from [0, 50000] using the meta seed; the report is
    deterministic given (series, n_seeds, config, schedule, meta_seed) and
    independent of the worker count.
    """
    if not series_list:
        raise ValueError("need at least one series")
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    config = config or RmdnConfig()
    schedule = schedule or TrainSchedule()
    seeds = sample_seeds(n_seeds, 0, 50000, meta_seed=meta_seed)

    tasks = []
    for series in series_list:
        tasks.append((series, config, schedule, meta_seed, 0, METHOD_GARCH))
        for seed in seeds:
            for method in RMDN_METHODS:
                tasks.append((series, config, schedule, meta_seed, seed, method))

    if workers <= 1:
        records = [_run_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_task, tasks))

    records.sort(key=lambda r: (r.series, r.method, -1 if r.seed is None else r.seed))
    echo = {
        "n_components": config.n_components,
        "k_hidden": config.k_hidden,
        "elu_alpha": config.elu_alpha,
        "elu_eps": config.elu_eps,
        "learning_rate": schedule.learning_rate,
        "pretrain_epochs": schedule.pretrain_epochs,
        "train_epochs": schedule.train_epochs,
        "meta_seed": meta_seed,
        "seeds": seeds,
    }
    return BenchmarkReport(records, echo)


def save_model(params: RmdnParams, config: RmdnConfig, state: RecurrentState,
               path) -> None:
    """Write a schema-versioned JSON model file; floats keep full precision."""
    payload = {
        "schema_version": MODEL_SCHEMA_VERSION,
        "config": {
            "n_components": config.n_components,
            "k_hidden": config.k_hidden,
            "elu_alpha": config.elu_alpha,
            "elu_eps": config.elu_eps,
        },
        "params": {name: getattr(params, name).tolist() for name in _PARAM_FIELDS},
        "state": {
            "sigma2_prev": state.sigma2_prev.tolist(),
            "e2_prev": state.e2_prev,
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


_PARAM_SHAPES = {
    "mix_in_w": ("K",), "mix_in_b": ("K",), "mix_out_w": ("N", "K"), "mix_out_b": ("N",),
    "mean_in_w": ("K",), "mean_in_b": ("K",), "mean_out_w": ("N", "K"), "mean_out_b": ("N",),
    "var_in_w": ("2K",), "var_in_b": ("2K",), "var_out_w": ("N", "2K"), "var_out_b": ("N",),
}


def load_model(path) -> tuple[RmdnParams, RmdnConfig, RecurrentState]:
    """Read a model file back; round-trips every parameter bit-exactly."""
    with open(path, encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFileError(f"{path}: not valid JSON ({exc})") from None

    version = payload.get("schema_version")
    if version != MODEL_SCHEMA_VERSION:
        raise ModelFileError(
            f"{path}: unsupported schema_version {version!r} (expected {MODEL_SCHEMA_VERSION})"
        )
    for section in ("config", "params", "state"):
        if section not in payload:
            raise ModelFileError(f"{path}: missing field {section!r}")
    cfg = payload["config"]
    for key in ("n_components", "k_hidden", "elu_alpha", "elu_eps"):
        if key not in cfg:
            raise ModelFileError(f"{path}: missing field config.{key}")
    config = RmdnConfig(cfg["n_components"], cfg["k_hidden"], cfg["elu_alpha"], cfg["elu_eps"])

    dims = {"N": config.n_components, "K": config.k_hidden, "2K": 2 * config.k_hidden}
    arrays = {}
    for name in _PARAM_FIELDS:
        if name not in payload["params"]:
            raise ModelFileError(f"{path}: missing field params.{name}")
        arr = np.asarray(payload["params"][name], dtype=float)
        want = tuple(dims[d] for d in _PARAM_SHAPES[name])
        if arr.shape != want:
            raise ModelFileError(
                f"{path}: shape mismatch for params.{name}: file has {arr.shape}, "
                f"config N={config.n_components} K={config.k_hidden} needs {want}"
            )
        arrays[name] = arr
    params = RmdnParams(**arrays)

    st = payload["state"]
    for key in ("sigma2_prev", "e2_prev"):
        if key not in st:
            raise ModelFileError(f"{path}: missing field state.{key}")
    sigma2_prev = np.asarray(st["sigma2_prev"], dtype=float)
    if sigma2_prev.shape != (config.n_components,):
        raise ModelFileError(
            f"{path}: shape mismatch for state.sigma2_prev: file has {sigma2_prev.shape}, "
            f"needs ({config.n_components},)"
        )
    state = RecurrentState(sigma2_prev, st["e2_prev"])
    return params, config, state


def _fmt_avg(value: float | None, decimals: int = 2) -> str:
    return "n/a" if value is None else f"{value:.{decimals}f}"


def render_report(report: BenchmarkReport, format: str = "text") -> str:
    """Render the benchmark as a human-readable text table pair or as CSV."""
    if format == "csv":
        lines = ["series,method,n_runs,n_not_converged,n_converged,avg_loglik"]
        for series in report.series_names():
            for method in ALL_METHODS:
                nc, c = report.counts(series, method)
                avg = report.average_loglik(series, method)
                avg_str = "n/a" if avg is None else repr(avg)
                lines.append(f"{series},{method},{nc + c},{nc},{c},{avg_str}")
        return "\n".join(lines) + "\n"
    if format != "text":
        raise ValueError(f"unknown report format {format!r}")

    echo = report.config_echo
    lines = [
        "configuration: "
        + " ".join(f"{k}={echo[k]}" for k in ("n_components", "k_hidden", "learning_rate",
                                              "pretrain_epochs", "train_epochs", "meta_seed")),
        f"seeds: {echo['seeds']}",
        "",
        "In-sample convergence counts",
        f"{'series':<20}{'plain':>14}{'':>12}{'pretrained':>16}{'':>12}",
        f"{'':<20}{'NotConverged':>14}{'Converged':>12}{'NotConverged':>16}{'Converged':>12}",
    ]
    total = {m: [0, 0] for m in RMDN_METHODS}
    for series in report.series_names():
        row = f"{series:<20}"
        for method in (METHOD_PLAIN, METHOD_PRETRAINED):
            nc, c = report.counts(series, method)
            total[method][0] += nc
            total[method][1] += c
            width = (14, 12) if method == METHOD_PLAIN else (16, 12)
            row += f"{nc:>{width[0]}}{c:>{width[1]}}"
        lines.append(row)
    t_plain, t_pre = total[METHOD_PLAIN], total[METHOD_PRETRAINED]
    lines.append(f"{'Total':<20}{t_plain[0]:>14}{t_plain[1]:>12}{t_pre[0]:>16}{t_pre[1]:>12}")

    def pct(part, whole):
        return f"{100.0 * part / whole:.0f}%" if whole else "n/a"

    n_plain = sum(t_plain)
    n_pre = sum(t_pre)
    lines.append(
        f"{'Total%':<20}{pct(t_plain[0], n_plain):>14}{pct(t_plain[1], n_plain):>12}"
        f"{pct(t_pre[0], n_pre):>16}{pct(t_pre[1], n_pre):>12}"
    )
    lines += [
        "",
        "Average log-likelihood over converged runs",
        f"{'series':<20}{'garch':>14}{'pretrained':>14}{'plain':>14}",
    ]
    for series in report.series_names():
        row = f"{series:<20}"
        for method in (METHOD_GARCH, METHOD_PRETRAINED, METHOD_PLAIN):
            row += f"{_fmt_avg(report.average_loglik(series, method)):>14}"
        lines.append(row)
    lines += ["", "averages use converged runs only; n/a = no converged runs"]
    return "\n".join(lines) + "\n"
