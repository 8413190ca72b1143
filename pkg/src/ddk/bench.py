"""Monte Carlo harness: seeded data generation, method execution, RMSE and
control-cost metrics, CSV persistence, and five-number summaries."""

from __future__ import annotations

import concurrent.futures
import csv
import io
import json
import time
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Optional

import numpy as np

from . import baselines
from .benchconfig import ExperimentConfig
from .estimator import Method, pinv_init, run_algorithm1
from .lti import LtiSystem, lag, simulate
from .sigdata import SignalMatrix, Trajectory, build_signal_matrix
from .tasks import ControlObjective, TaskSpec, build_control, build_prediction, \
    build_smoothing, control_cost
from .uncertainty import NoiseModel, sample_stationary_process

BAYES_METHODS = {"nonlinear": Method.NONLINEAR, "sqp": Method.SQP,
                 "one_iteration": Method.ONE_ITERATION}


@dataclass
class MethodOutcome:
    metric: float
    wall_ms: float
    converged: bool
    error: str = ""

    @property
    def failed(self) -> bool:
        return bool(self.error) or not np.isfinite(self.metric)


@dataclass
class TrialResult:
    trial: int
    seed: str
    outcomes: dict[str, MethodOutcome] = field(default_factory=dict)


def _stream(base_seed: int, trial: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng([base_seed, trial, purpose])


def _simulate_with_burn_in(
    system: LtiSystem, rng: np.random.Generator, length: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Noise-free inputs/outputs of the given length after a zero-state burn-in.

    Returns (inputs, outputs, state after the last returned step).
    """
    burn = 5 * system.n_x
    u_all = rng.standard_normal((burn + length, system.n_u))
    y_all, x_end = simulate(system, u_all, return_state=True)
    return u_all[burn:], y_all[burn:], x_end


def _rmse(err: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(err))))


@dataclass
class _TrialData:
    system: LtiSystem
    task: TaskSpec
    h: SignalMatrix
    model_offline: NoiseModel
    truth_outputs: np.ndarray
    control_state: Optional[np.ndarray]
    objective: Optional[ControlObjective]


def _prepare_trial(config: ExperimentConfig, trial: int) -> _TrialData:
    system = config.make_system(_stream(config.base_seed, trial, 0))
    model_offline = config.offline_noise_model()
    model_online = config.online_noise_model()
    plant_lag = lag(system)

    u0, y0, _ = _simulate_with_burn_in(
        system, _stream(config.base_seed, trial, 1), config.data_length)
    noise = sample_stationary_process(
        model_offline, config.data_length, _stream(config.base_seed, trial, 2))
    offline = Trajectory(u=u0 + noise[:, : system.n_u], y=y0 + noise[:, system.n_u :])
    h = build_signal_matrix(offline, config.horizon, config.construction)

    horizon = config.horizon
    past = config.past_length
    objective = None
    control_state = None
    if config.task == "t3":
        u_true, y_true, control_state = _simulate_with_burn_in(
            system, _stream(config.base_seed, trial, 3), past)
        truth_outputs = y_true
    else:
        u_true, y_true, _ = _simulate_with_burn_in(
            system, _stream(config.base_seed, trial, 3), horizon)
        truth_outputs = y_true
    window = u_true.shape[0]
    noise_on = sample_stationary_process(
        model_online, horizon, _stream(config.base_seed, trial, 4))[:window]
    measured = Trajectory(
        u=u_true + noise_on[:, : system.n_u], y=y_true + noise_on[:, system.n_u :])

    if config.task == "t1":
        task = build_smoothing(measured, model_online)
    elif config.task == "t2":
        initial = Trajectory(u=measured.u[:past], y=measured.y[:past])
        task = build_prediction(initial, measured.u[past:], model_online, plant_lag)
    else:
        u_ref, y_ref, q, r = config.references(system)
        objective = ControlObjective(
            q=q * np.eye(system.n_y), r=r * np.eye(system.n_u),
            u_ref=u_ref, y_ref=y_ref)
        task = build_control(measured, objective, model_online, plant_lag)
    return _TrialData(
        system=system, task=task, h=h, model_offline=model_offline,
        truth_outputs=truth_outputs, control_state=control_state,
        objective=objective,
    )


def _control_metric(data: _TrialData, planned_inputs: np.ndarray) -> float:
    """Cost of the realized plant trajectory under the planned inputs."""
    y_real = simulate(data.system, planned_inputs, data.control_state)
    task = data.task
    tail = np.hstack([planned_inputs, y_real]).ravel()
    z_real = np.zeros(task.nl)
    z_real[task.n * task.past_length :] = tail
    return control_cost(z_real, data.objective, task.past_length)


def _run_method(config: ExperimentConfig, data: _TrialData, name: str) -> MethodOutcome:
    task = data.task
    start = time.perf_counter()
    try:
        converged = True
        if name in BAYES_METHODS:
            report = run_algorithm1(task, data.h, data.model_offline, BAYES_METHODS[name])
            converged = report.g.converged
            z_hat = report.z_hat
            if config.task == "t1":
                y_hat = z_hat.reshape(task.horizon, task.n)[:, task.n_u :]
                metric = _rmse(y_hat - data.truth_outputs)
            elif config.task == "t2":
                y_hat = task.future_outputs_from(z_hat)
                metric = _rmse(y_hat - data.truth_outputs[task.past_length :])
            else:
                metric = _control_metric(data, task.future_inputs_from(z_hat))
        elif name == "predictor16":
            part = baselines.PartitionedData.from_task(task, data.h)
            lam = config.predictor_lambda
            if lam is None:
                sigma_d_sq = float(config.raw["offline_noise"]["sigma_v2"])
                lam = baselines.predictor_lambda(task.n_y, task.past_length, sigma_d_sq)
            _, y_future = baselines.predictor_regularized(part, lam)
            truth = data.truth_outputs[task.past_length :].ravel()
            metric = _rmse(y_future - truth)
        elif name == "deepc17":
            part = baselines.PartitionedData.from_task(task, data.h)
            q = float(config.raw["control"]["q"])
            r = float(config.raw["control"]["r"])
            sigma_sq = float(config.raw["online_noise"]["sigma_v2"])
            sigma_d_sq = float(config.raw["offline_noise"]["sigma_v2"])
            g0 = pinv_init(task, data.h)
            _, u_plan, _ = baselines.deepc_regularized(
                part, q, r, sigma_sq, sigma_d_sq, float(g0 @ g0))
            metric = _control_metric(data, u_plan.reshape(-1, task.n_u))
        elif name == "deepc-unreg":
            part = baselines.PartitionedData.from_task(task, data.h)
            q = float(config.raw["control"]["q"])
            r = float(config.raw["control"]["r"])
            soft = q if config.deepc_soft_yp else None
            _, u_plan, _ = baselines.deepc_unregularized(part, q, r, soft_yp_weight=soft)
            metric = _control_metric(data, u_plan.reshape(-1, task.n_u))
        else:
            raise ValueError(f"unknown method {name!r}")
        return MethodOutcome(metric=metric, converged=converged,
                             wall_ms=1e3 * (time.perf_counter() - start))
    except Exception as exc:  # per-trial failures are recorded, not fatal
        return MethodOutcome(metric=np.nan, converged=False,
                             wall_ms=1e3 * (time.perf_counter() - start),
                             error=f"{type(exc).__name__}: {exc}")


def run_trial(config: ExperimentConfig, trial: int) -> TrialResult:
    data = _prepare_trial(config, trial)
    result = TrialResult(trial=trial, seed=f"{config.base_seed}-{trial}")
    for name in config.methods:
        result.outcomes[name] = _run_method(config, data, name)
    return result


def run_experiment(
    config: ExperimentConfig, workers: int = 1
) -> list[TrialResult]:
    """Run all trials; trial i always sees the stream derived from (seed, i)."""
    indices = list(range(config.trials))
    if workers <= 1:
        results = [run_trial(config, i) for i in indices]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_trial, [config] * len(indices), indices))
    results.sort(key=lambda r: r.trial)
    return results


def trials_csv(results: list[TrialResult]) -> str:
    """Deterministic per-trial results; wall times live in the timing sidecar."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["trial", "seed", "method", "metric", "converged"])
    for res in results:
        for name, out in res.outcomes.items():
            writer.writerow([
                res.trial, res.seed, name,
                "" if not np.isfinite(out.metric) else repr(float(out.metric)),
                out.converged,
            ])
    return buf.getvalue()


def timings_csv(results: list[TrialResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["trial", "seed", "method", "wall_ms", "error"])
    for res in results:
        for name, out in res.outcomes.items():
            writer.writerow([res.trial, res.seed, name, f"{out.wall_ms:.3f}",
                             out.error])
    return buf.getvalue()


@dataclass(frozen=True)
class MethodSummary:
    method: str
    count: int
    failures: int
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float
    mean: float


def summarize(results: list[TrialResult]) -> list[MethodSummary]:
    """Five-number summary plus mean per method; quartiles by linear interpolation."""
    if not results:
        raise ValueError("no results to summarize")
    methods: list[str] = []
    for res in results:
        for name in res.outcomes:
            if name not in methods:
                methods.append(name)
    rows = []
    for name in methods:
        values = [res.outcomes[name].metric for res in results if name in res.outcomes]
        ok = np.array([v for v in values if np.isfinite(v)])
        failures = len(values) - ok.size
        if ok.size:
            q1, med, q3 = np.percentile(ok, [25, 50, 75])
            rows.append(MethodSummary(
                method=name, count=int(ok.size), failures=failures,
                minimum=float(ok.min()), q1=float(q1), median=float(med),
                q3=float(q3), maximum=float(ok.max()), mean=float(ok.mean())))
        else:
            rows.append(MethodSummary(
                method=name, count=0, failures=failures,
                minimum=np.nan, q1=np.nan, median=np.nan, q3=np.nan,
                maximum=np.nan, mean=np.nan))
    return rows


def summary_csv(rows: list[MethodSummary]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "count", "failures", "min", "q1", "median",
                     "q3", "max", "mean"])
    for r in rows:
        writer.writerow([
            r.method, r.count, r.failures,
            *(repr(float(v)) if np.isfinite(v) else "" for v in
              (r.minimum, r.q1, r.median, r.q3, r.maximum, r.mean)),
        ])
    return buf.getvalue()


def summary_table(rows: list[MethodSummary]) -> str:
    header = f"{'method':<16}{'n':>5}{'fail':>6}{'min':>12}{'q1':>12}" \
             f"{'median':>12}{'q3':>12}{'max':>12}{'mean':>12}"
    lines = [header, "-" * len(header)]
    for r in rows:
        vals = "".join(
            f"{v:>12.5g}" if np.isfinite(v) else f"{'-':>12}"
            for v in (r.minimum, r.q1, r.median, r.q3, r.maximum, r.mean)
        )
        lines.append(f"{r.method:<16}{r.count:>5}{r.failures:>6}{vals}")
    return "\n".join(lines)


def boxplot_svg(rows: list[MethodSummary], title: str = "") -> str:
    """Render five-number boxes as a standalone SVG document."""
    width, height = 640, 360
    margin = 60
    finite = [r for r in rows if np.isfinite(r.median)]
    if not finite:
        return f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}"/>'
    lo = min(r.minimum for r in finite)
    hi = max(r.maximum for r in finite)
    span = (hi - lo) or 1.0
    lo -= 0.05 * span
    hi += 0.05 * span

    def y_of(v: float) -> float:
        return height - margin - (v - lo) / (hi - lo) * (height - 2 * margin)

    slot = (width - 2 * margin) / len(rows)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="monospace" font-size="12">',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle">{title}</text>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" '
        f'y2="{height - margin}" stroke="black"/>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        val = lo + frac * (hi - lo)
        y = y_of(val)
        parts.append(f'<line x1="{margin - 4}" y1="{y:.1f}" x2="{margin}" '
                     f'y2="{y:.1f}" stroke="black"/>')
        parts.append(f'<text x="{margin - 8}" y="{y + 4:.1f}" '
                     f'text-anchor="end">{val:.3g}</text>')
    for i, r in enumerate(rows):
        cx = margin + (i + 0.5) * slot
        half = 0.25 * slot
        parts.append(f'<text x="{cx:.1f}" y="{height - margin + 18}" '
                     f'text-anchor="middle">{r.method}</text>')
        if not np.isfinite(r.median):
            continue
        for v in (r.minimum, r.maximum):
            parts.append(f'<line x1="{cx - half / 2:.1f}" y1="{y_of(v):.1f}" '
                         f'x2="{cx + half / 2:.1f}" y2="{y_of(v):.1f}" stroke="black"/>')
        parts.append(f'<line x1="{cx:.1f}" y1="{y_of(r.minimum):.1f}" '
                     f'x2="{cx:.1f}" y2="{y_of(r.q1):.1f}" stroke="black"/>')
        parts.append(f'<line x1="{cx:.1f}" y1="{y_of(r.q3):.1f}" '
                     f'x2="{cx:.1f}" y2="{y_of(r.maximum):.1f}" stroke="black"/>')
        parts.append(f'<rect x="{cx - half:.1f}" y="{y_of(r.q3):.1f}" '
                     f'width="{2 * half:.1f}" '
                     f'height="{y_of(r.q1) - y_of(r.q3):.1f}" '
                     f'fill="none" stroke="black"/>')
        parts.append(f'<line x1="{cx - half:.1f}" y1="{y_of(r.median):.1f}" '
                     f'x2="{cx + half:.1f}" y2="{y_of(r.median):.1f}" '
                     f'stroke="black" stroke-width="2"/>')
    parts.append("</svg>")
    return "\n".join(parts)


def _package_version(name: str) -> str:
    try:
        return metadata.version(name)
    except metadata.PackageNotFoundError:
        return "unknown"


def write_outputs(
    config: ExperimentConfig,
    results: list[TrialResult],
    out_dir: str | Path,
    boxplot: bool = False,
) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trials.csv").write_text(trials_csv(results), encoding="utf-8")
    (out / "timings.csv").write_text(timings_csv(results), encoding="utf-8")
    rows = summarize(results)
    (out / "summary.csv").write_text(summary_csv(rows), encoding="utf-8")
    manifest = {
        "config": config.raw,
        "config_hash": config.config_hash(),
        "base_seed": config.base_seed,
        "trials": config.trials,
        "versions": {
            "ddk": _package_version("ddk"),
            "numpy": np.__version__,
            "scipy": _package_version("scipy"),
        },
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if boxplot:
        (out / "boxplot.svg").write_text(
            boxplot_svg(rows, title=config.task), encoding="utf-8")
    return out
