"""Experiment runner, offline cost oracle and reporting."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .estimator import (
    DivergenceError,
    EstimatorConfig,
    initial_snapshot,
    newton_update,
    reset,
)
from .model import WienerModel, make_example1_model, make_example2_model
from .predictor import NumericalDivergence, OEPredictor
from .streams import NoiseStreams, derive_seed
from .truth import EXAMPLE1_TRUTH, EXAMPLE2_TRUTH, Dataset, gen_example1, gen_example2

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "RunReport",
    "identify",
    "run_experiment",
    "offline_cost",
    "online_gradient",
    "summarize",
    "true_parameters",
    "build_model",
    "make_dataset",
    "write_reports",
    "read_reports",
]


class ConfigError(ValueError):
    pass


# ----------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment, loadable from a JSON document.

    See ``docs/config.md`` for the schema. ``baseline`` fits the model with the
    disturbance removed (``w = 0``, one path, no ``sigma``).
    """

    example: int = 2
    case: int = 1
    N: int = 5000
    replications: int = 10
    base_seed: int = 0
    baseline: bool = False
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    init_policy: str = "uniform"  # "fixed" | "uniform"
    theta0: tuple | None = None
    init_spread: float = 0.5
    initial_regressors: str = "zero"  # "zero" | "data"
    disturbance_paths: str = "recursive"  # "recursive" | "memoryless"
    trailing_fraction: float = 0.1
    noise_std: float | None = None
    case3_param: str = "variance"
    sigma_matched: float = 0.1
    output_dir: str | None = None
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        if self.example not in (1, 2):
            raise ConfigError(f"example must be 1 or 2, got {self.example}")
        if self.example == 2 and self.case not in (0, 1, 2, 3):
            raise ConfigError(f"case must be 0..3, got {self.case}")
        if self.N < 1 or self.replications < 1:
            raise ConfigError("N and replications must be at least 1")
        if self.init_policy not in ("fixed", "uniform"):
            raise ConfigError(f"unknown init_policy {self.init_policy!r}")
        if self.init_policy == "fixed" and self.theta0 is None:
            raise ConfigError("init_policy 'fixed' needs theta0")
        if self.initial_regressors not in ("zero", "data"):
            raise ConfigError(f"unknown initial_regressors {self.initial_regressors!r}")
        if self.disturbance_paths not in ("recursive", "memoryless"):
            raise ConfigError(f"unknown disturbance_paths {self.disturbance_paths!r}")
        if not 0 < self.trailing_fraction <= 1:
            raise ConfigError("trailing_fraction must lie in (0, 1]")
        if self.baseline and self.example != 2:
            raise ConfigError("the ignore-disturbance baseline is defined for example 2")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "schema_version" not in doc:
            raise ConfigError("config must carry schema_version")
        est = doc.pop("estimator", {}) or {}
        est_known = set(EstimatorConfig.__dataclass_fields__)
        if set(est) - est_known:
            raise ConfigError(f"unknown estimator keys: {sorted(set(est) - est_known)}")
        try:
            estimator = EstimatorConfig(**est)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if doc.get("theta0") is not None:
            doc["theta0"] = tuple(float(v) for v in doc["theta0"])
        return cls(estimator=estimator, **doc)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["theta0"] = None if self.theta0 is None else list(self.theta0)
        return doc


def build_model(config: ExperimentConfig) -> WienerModel:
    if config.example == 1:
        return make_example1_model()
    return make_example2_model(include_disturbance=not config.baseline)


def true_parameters(config: ExperimentConfig, model: WienerModel) -> np.ndarray:
    """Reference values for ``model.names``; NaN where no true value exists."""
    if config.example == 1:
        return EXAMPLE1_TRUTH.copy()
    ref = dict(EXAMPLE2_TRUTH)
    ref["sigma"] = config.sigma_matched if config.case == 0 else math.nan
    return np.array([ref[name] for name in model.names])


def make_dataset(config: ExperimentConfig, run_seed: int) -> Dataset:
    if config.example == 1:
        kw = {} if config.noise_std is None else {"noise_std": config.noise_std}
        return gen_example1(config.N, run_seed, **kw)
    kw = {} if config.noise_std is None else {"noise_std": config.noise_std}
    return gen_example2(config.N, config.case, run_seed, case3_param=config.case3_param,
                        sigma_matched=config.sigma_matched, **kw)


def initial_theta(config: ExperimentConfig, model: WienerModel, run_seed: int) -> np.ndarray:
    if config.init_policy == "fixed":
        theta0 = np.array(config.theta0, dtype=float)
        if theta0.size != model.d:
            raise ConfigError(f"theta0 has {theta0.size} entries, model needs {model.d}")
        if theta0 not in model.constraint:
            raise ConfigError(f"theta0 {theta0} violates {model.constraint.description}")
        return theta0
    ref = true_parameters(config, model)
    # sigma has no true value under a misspecified disturbance: centre on 1
    ref = np.where(np.isnan(ref), 1.0, ref)
    rng = NoiseStreams(run_seed).generator("init", 1)
    for _ in range(1000):
        theta0 = ref * (1.0 + config.init_spread * rng.uniform(-1.0, 1.0, size=ref.size))
        if theta0 in model.constraint:
            return theta0
    raise ConfigError("could not draw an admissible initial parameter in 1000 attempts")


# ----------------------------------------------------------------------
# a single identification run


@dataclass
class RunReport:
    replication: int
    seed: int
    names: tuple
    k: np.ndarray
    t: np.ndarray
    theta: np.ndarray  # (N, d)
    eps: np.ndarray
    proj_hit: np.ndarray
    theta0: np.ndarray
    wall_clock: float = 0.0
    status: str = "ok"
    message: str = ""

    @property
    def final(self) -> np.ndarray:
        return self.theta[-1] if len(self.theta) else self.theta0

    def trailing(self, fraction: float = 0.1) -> np.ndarray:
        if not 0 < fraction <= 1:
            raise ValueError("trailing window fraction must lie in (0, 1]")
        n = int(math.ceil(fraction * len(self.theta)))
        if n < 1:
            raise ValueError("trailing window is empty")
        return self.theta[-n:]

    def diagnostics(self, fraction: float = 0.1) -> dict:
        win = self.trailing(fraction)
        mean = win.mean(axis=0)
        std = win.std(axis=0)
        return {
            "window_mean": mean,
            "window_std": std,
            "window_median": np.median(win, axis=0),
            "converged": bool(np.all(std < np.maximum(0.05 * np.abs(mean), 0.02))),
        }


def identify(dataset: Dataset, model: WienerModel, est: EstimatorConfig, theta0, seed: int,
             replication: int = 0, warmup: int = 0, M: int | None = None,
             memoryless: bool = False) -> RunReport:
    """Run the online estimator over ``dataset``.

    The first ``warmup`` samples only fill the regressors (no parameter
    update, nothing recorded); the gain index follows the sample index, so the
    first update uses ``gamma_{warmup+1}``.
    """
    M = est.M if M is None else M
    if model.disturbance is None:
        M = 1
    start = time.perf_counter()
    noise = NoiseStreams(seed)
    pred = OEPredictor(model, M, exosystem=dataset.exosystem, memoryless=memoryless)
    state = pred.initial_state(t0=dataset.t[0], u0=dataset.u[0])
    theta0 = np.asarray(theta0, dtype=float)
    snap = initial_snapshot(theta0, est, k0=warmup)
    N = dataset.N
    rows = N - warmup
    theta_hist = np.full((rows, model.d), np.nan)
    eps_hist = np.full(rows, np.nan)
    hit_hist = np.zeros(rows, dtype=bool)
    status, message = "ok", ""
    i = 0
    for k in range(1, N + 1):
        try:
            out, state = pred.step(state, snap.theta, dataset.y[k], dataset.t[k], dataset.u[k], noise)
            if k <= warmup:
                continue
            snap = newton_update(snap, out.psi_bar, out.eps, est, model.constraint)
        except (DivergenceError, NumericalDivergence) as exc:
            if est.divergence == "reset":
                log.warning("replication %d: %s; resetting", replication, exc)
                snap = reset(snap, theta0, est)
                state = pred.initial_state(t0=dataset.t[k], u0=dataset.u[k])
                if k > warmup:
                    theta_hist[i] = snap.theta
                    i += 1
                continue
            status, message = "diverged", str(exc)
            log.warning("replication %d: %s", replication, exc)
            break
        theta_hist[i] = snap.theta
        eps_hist[i] = snap.eps
        hit_hist[i] = snap.projected
        i += 1
    ks = np.arange(warmup + 1, N + 1)
    return RunReport(
        replication=replication, seed=seed, names=model.names, k=ks[:i], t=dataset.t[ks][:i],
        theta=theta_hist[:i], eps=eps_hist[:i], proj_hit=hit_hist[:i], theta0=theta0,
        wall_clock=time.perf_counter() - start, status=status, message=message,
    )


def run_experiment(config: ExperimentConfig, replications=None) -> list[RunReport]:
    """All replications of ``config``; replication ``r`` uses ``derive_seed(base_seed, r)``."""
    model = build_model(config)
    warmup = model.plant.order if (config.initial_regressors == "data" and config.example == 2) else 0
    reports = []
    for r in (range(config.replications) if replications is None else replications):
        run_seed = derive_seed(config.base_seed, r)
        data = make_dataset(config, run_seed)
        theta0 = initial_theta(config, model, run_seed)
        rep = identify(data, model, config.estimator, theta0, run_seed, replication=r, warmup=warmup,
                       memoryless=config.disturbance_paths == "memoryless")
        log.info("replication %d: %s final=%s (%.1fs)", r, rep.status, np.round(rep.final, 4), rep.wall_clock)
        reports.append(rep)
    return reports


# ----------------------------------------------------------------------
# offline oracle


def _frozen_pass(theta, dataset: Dataset, model: WienerModel, M: int, seed: int, memoryless: bool = False,
                 streams: NoiseStreams | None = None):
    theta = np.asarray(theta, dtype=float)
    if theta not in model.constraint:
        raise ValueError(f"theta {theta} is outside {model.constraint.description}")
    if dataset.N < 1:
        raise ValueError("dataset is empty")
    if model.disturbance is None:
        M = 1
    pred = OEPredictor(model, M, exosystem=dataset.exosystem, memoryless=memoryless)
    noise = NoiseStreams(seed) if streams is None else streams
    state = pred.initial_state(t0=dataset.t[0], u0=dataset.u[0])
    for k in range(1, dataset.N + 1):
        out, state = pred.step(state, theta, dataset.y[k], dataset.t[k], dataset.u[k], noise)
        yield out


def offline_cost(theta, dataset: Dataset, model: WienerModel, M_eval: int = 200, seed: int = 0,
                 memoryless: bool = False, streams: NoiseStreams | None = None) -> float:
    """Monte-Carlo estimate of the batch cost ``(1/N) sum 0.5 (y_k - y_bar_k(theta))^2`` at frozen theta.

    ``streams`` replaces the default ``NoiseStreams(seed)`` (e.g. to share
    random numbers with another evaluation).
    """
    if M_eval < 1:
        raise ValueError("M_eval must be at least 1")
    total = 0.0
    for out in _frozen_pass(theta, dataset, model, M_eval, seed, memoryless, streams):
        total += 0.5 * out.eps**2
    return total / dataset.N


def online_gradient(theta, dataset: Dataset, model: WienerModel, M: int = 200, seed: int = 0,
                    memoryless: bool = False, streams: NoiseStreams | None = None) -> np.ndarray:
    """Time average of ``-psi_bar_k eps_k`` at frozen theta (an estimate of the cost gradient)."""
    acc = np.zeros(model.d)
    for out in _frozen_pass(theta, dataset, model, M, seed, memoryless, streams):
        acc -= out.psi_bar * out.eps
    return acc / dataset.N


# ----------------------------------------------------------------------
# reporting


def summarize(reports: list[RunReport], trailing_fraction: float = 0.1, truth=None) -> dict:
    """Per-parameter statistics across replications (JSON-serializable)."""
    if not reports:
        raise ValueError("no reports to summarize")
    if not 0 < trailing_fraction <= 1:
        raise ValueError("trailing window fraction must lie in (0, 1]")
    names = list(reports[0].names)
    reports = sorted(reports, key=lambda r: r.replication)
    usable = [r for r in reports if len(r.theta)]
    finals = np.array([r.final for r in usable]).reshape(len(usable), len(names))
    diag = [r.diagnostics(trailing_fraction) for r in usable]
    medians = np.array([dg["window_median"] for dg in diag]).reshape(len(usable), len(names))

    def stats(x):
        if not len(x):
            return {"median": None, "iqr": None, "min": None, "max": None}
        q1, q2, q3 = np.percentile(x, [25, 50, 75])
        return {"median": float(q2), "iqr": float(q3 - q1), "min": float(np.min(x)), "max": float(np.max(x))}

    params = {}
    for i, name in enumerate(names):
        entry = {
            "final": stats(finals[:, i]),
            "final_abs": stats(np.abs(finals[:, i])),
            "trailing_median": stats(medians[:, i]),
        }
        if truth is not None and np.isfinite(truth[i]):
            entry["true"] = float(truth[i])
        params[name] = entry
    return {
        "schema_version": SCHEMA_VERSION,
        "parameters": names,
        "replications": len(reports),
        "diverged": sum(r.status != "ok" for r in reports),
        "trailing_fraction": trailing_fraction,
        "statistics": params,
        "runs": [
            {
                "replication": r.replication,
                "seed": r.seed,
                "status": r.status,
                "message": r.message,
                "steps": int(len(r.theta)),
                "wall_clock": r.wall_clock,
                "theta0": [float(v) for v in r.theta0],
                "final": [float(v) for v in r.final],
                "trailing_median": ([float(v) for v in r.diagnostics(trailing_fraction)["window_median"]]
                                    if len(r.theta) else None),
                "converged": bool(r.diagnostics(trailing_fraction)["converged"]) if len(r.theta) else False,
            }
            for r in reports
        ],
    }


def write_trajectory(report: RunReport, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "t", "eps", "proj_hit"] + [f"theta_{i + 1}" for i in range(len(report.names))])
        for i in range(len(report.theta)):
            w.writerow([int(report.k[i]), f"{report.t[i]:.17g}", f"{report.eps[i]:.17g}", int(report.proj_hit[i])]
                       + [f"{v:.17g}" for v in report.theta[i]])
    return path


def write_reports(reports: list[RunReport], out_dir, config: ExperimentConfig | None = None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for rep in reports:
        write_trajectory(rep, out / f"trajectory_{rep.replication:03d}.csv")
    meta = {
        "names": list(reports[0].names),
        "runs": [{"replication": r.replication, "seed": r.seed, "status": r.status, "message": r.message,
                  "wall_clock": r.wall_clock, "theta0": [float(v) for v in r.theta0]} for r in reports],
    }
    if config is not None:
        meta["config"] = config.to_dict()
    (out / "runs.json").write_text(json.dumps(meta, indent=2))
    truth = None
    if config is not None:
        truth = true_parameters(config, build_model(config))
    summary = summarize(reports, config.trailing_fraction if config else 0.1, truth)
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    return summary


def read_reports(in_dir) -> tuple[list[RunReport], dict]:
    src = Path(in_dir)
    meta = json.loads((src / "runs.json").read_text())
    names = tuple(meta["names"])
    reports = []
    for run in meta["runs"]:
        path = src / f"trajectory_{run['replication']:03d}.csv"
        data = np.genfromtxt(path, delimiter=",", skip_header=1, ndmin=2)
        if data.size == 0:
            data = np.zeros((0, 4 + len(names)))
        reports.append(RunReport(
            replication=run["replication"], seed=run["seed"], names=names,
            k=data[:, 0].astype(int), t=data[:, 1], eps=data[:, 2], proj_hit=data[:, 3].astype(bool),
            theta=data[:, 4:], theta0=np.array(run["theta0"]), wall_clock=run["wall_clock"],
            status=run["status"], message=run["message"],
        ))
    return reports, meta
