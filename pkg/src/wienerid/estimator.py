"""Projected stochastic Newton recursion for the parameter estimate."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .model import ConstraintSet

__all__ = [
    "EstimatorConfig",
    "EstimatorSnapshot",
    "DivergenceError",
    "ProjectionError",
    "gain",
    "project",
    "newton_update",
    "initial_snapshot",
]

COND_LIMIT = 1e12


class DivergenceError(RuntimeError):
    def __init__(self, k: int, reason: str):
        super().__init__(f"estimate diverged at step {k}: {reason}")
        self.k = k
        self.reason = reason


class ProjectionError(ValueError):
    """The previous estimate is not admissible, so the projection is undefined."""


@dataclass(frozen=True)
class EstimatorConfig:
    gain_exponent: float = 1.0
    gain_scale: float = 1.0
    gain_offset: float = 0.0
    M: int = 100
    r0_scale: float = 10.0
    theta_bound: float = 1e6
    divergence: str = "abort"  # or "reset"

    def __post_init__(self):
        if not 0.5 < self.gain_exponent <= 1.0:
            raise ValueError(f"gain exponent must lie in (0.5, 1], got {self.gain_exponent}")
        if not self.gain_scale > 0:
            raise ValueError("gain scale must be positive")
        if self.gain_offset < 0:
            raise ValueError("gain offset must be nonnegative")
        if self.M < 1:
            raise ValueError("M must be at least 1")
        if not self.r0_scale > 0:
            raise ValueError("R_0 scale must be positive")
        if self.divergence not in ("abort", "reset"):
            raise ValueError(f"unknown divergence policy {self.divergence!r}")


@dataclass(frozen=True)
class EstimatorSnapshot:
    k: int
    theta: np.ndarray
    R: np.ndarray
    eps: float = 0.0
    psi_norm: float = 0.0
    projected: bool = False


def initial_snapshot(theta0, config: EstimatorConfig, k0: int = 0) -> EstimatorSnapshot:
    """``R_0 = r0_scale * I``; the first update then uses ``gamma_{k0+1}``."""
    theta0 = np.array(theta0, dtype=float)
    if k0 < 0:
        raise ValueError("k0 must be nonnegative")
    return EstimatorSnapshot(k=int(k0), theta=theta0, R=config.r0_scale * np.eye(theta0.size))


def gain(k: int, config: EstimatorConfig) -> float:
    """``gamma_k = gain_scale / (k + gain_offset)**gain_exponent``."""
    if k < 1:
        raise ValueError("gain index starts at 1")
    return config.gain_scale / (k + config.gain_offset) ** config.gain_exponent


def project(theta, theta_prev, constraint: ConstraintSet):
    """Keep ``theta`` if admissible, otherwise fall back to ``theta_prev``.

    Returns ``(estimate, hit)`` where ``hit`` flags a rejected candidate.
    """
    if theta_prev not in constraint:
        raise ProjectionError(f"previous estimate {np.asarray(theta_prev)} violates {constraint.description}")
    if theta in constraint:
        return np.asarray(theta, dtype=float), False
    return np.asarray(theta_prev, dtype=float).copy(), True


def _newton_direction(R, g):
    d = R.shape[0]
    if np.linalg.cond(R) > COND_LIMIT:
        R = R + (1e-8 * np.trace(R) / d) * np.eye(d)
    try:
        return cho_solve(cho_factor(R, lower=True), g)
    except LinAlgError:
        return np.linalg.lstsq(R, g, rcond=None)[0]


def newton_update(snapshot: EstimatorSnapshot, psi_bar, eps: float, config: EstimatorConfig,
                  constraint: ConstraintSet) -> EstimatorSnapshot:
    """One stochastic Newton step followed by the keep-previous projection."""
    k = snapshot.k + 1
    g_k = gain(k, config)
    psi_bar = np.asarray(psi_bar, dtype=float)
    if not (math.isfinite(eps) and np.all(np.isfinite(psi_bar))):
        raise DivergenceError(k, "nonfinite prediction error or gradient")
    R = snapshot.R + g_k * (np.outer(psi_bar, psi_bar) - snapshot.R)
    R = 0.5 * (R + R.T)
    direction = _newton_direction(R, psi_bar * eps)
    candidate = snapshot.theta + g_k * direction
    if not np.all(np.isfinite(candidate)):
        raise DivergenceError(k, "nonfinite candidate")
    theta, hit = project(candidate, snapshot.theta, constraint)
    if np.linalg.norm(theta) > config.theta_bound:
        raise DivergenceError(k, f"|theta| = {np.linalg.norm(theta):.3g} exceeds bound")
    return EstimatorSnapshot(k=k, theta=theta, R=R, eps=float(eps),
                             psi_norm=float(math.sqrt(psi_bar @ psi_bar)), projected=hit)


def reset(snapshot: EstimatorSnapshot, theta0, config: EstimatorConfig) -> EstimatorSnapshot:
    """Restart from ``theta0`` keeping the step counter (divergence policy ``"reset"``)."""
    fresh = initial_snapshot(theta0, config)
    return replace(fresh, k=snapshot.k)
