"""Shared validation oracles for the test suite."""

from __future__ import annotations

import numpy as np

from wienerid.predictor import OEPredictor
from wienerid.streams import NoiseStreams


class AliasStreams(NoiseStreams):
    """Common random numbers across channels: the ``y`` draws are the leading
    ``n_w`` columns of the ``psi`` draws, so ``y_bar`` and ``psi_bar`` see the
    same disturbance paths."""

    def __init__(self, seed: int, n_w: int):
        super().__init__(seed)
        self.n_w = n_w

    def normal(self, channel, k, shape):
        if channel == "y":
            M = shape[0]
            return super().normal("psi", k, (M, 2 * self.n_w))[:, : self.n_w]
        return super().normal(channel, k, shape)


class PermutedStreams(NoiseStreams):
    """Rows (paths) of every draw permuted by a fixed permutation."""

    def __init__(self, seed: int, perm):
        super().__init__(seed)
        self.perm = np.asarray(perm)

    def normal(self, channel, k, shape):
        return super().normal(channel, k, shape)[self.perm]


class SplitStreams(NoiseStreams):
    """Per-channel seeds, to perturb one channel while freezing the others."""

    def __init__(self, seeds: dict, default: int = 0):
        super().__init__(default)
        self._sub = {ch: NoiseStreams(s) for ch, s in seeds.items()}

    def normal(self, channel, k, shape):
        if channel in self._sub:
            return self._sub[channel].normal(channel, k, shape)
        return super().normal(channel, k, shape)


def frozen_outputs(model, theta, dataset, M, streams, n_steps):
    """Run the predictor at frozen ``theta``; return ``(y_bar, psi_bar)`` histories."""
    pred = OEPredictor(model, M, exosystem=dataset.exosystem)
    state = pred.initial_state(t0=dataset.t[0], u0=dataset.u[0])
    y_bar = np.empty(n_steps)
    psi_bar = np.empty((n_steps, model.d))
    for k in range(1, n_steps + 1):
        out, state = pred.step(state, theta, dataset.y[k], dataset.t[k], dataset.u[k], streams)
        y_bar[k - 1] = out.y_bar
        psi_bar[k - 1] = out.psi_bar
    return y_bar, psi_bar


def gradient_fd_error(model, theta, dataset, M=20, seed=0, n_steps=50, step=1e-5, components=None):
    """Largest componentwise relative error between ``psi_bar_k`` and central
    differences of ``y_bar_k`` over ``n_steps`` steps with common random numbers."""
    theta = np.asarray(theta, dtype=float)
    _, psi = frozen_outputs(model, theta, dataset, M, AliasStreams(seed, model.n_w), n_steps)
    worst = 0.0
    for j in range(model.d) if components is None else components:
        tp, tm = theta.copy(), theta.copy()
        tp[j] += step
        tm[j] -= step
        yp, _ = frozen_outputs(model, tp, dataset, M, AliasStreams(seed, model.n_w), n_steps)
        ym, _ = frozen_outputs(model, tm, dataset, M, AliasStreams(seed, model.n_w), n_steps)
        fd = (yp - ym) / (2 * step)
        # absolute floor at the finite-difference round-off level
        err = np.abs(psi[:, j] - fd) / np.maximum(np.abs(fd), 1e-8)
        worst = max(worst, float(err.max()))
    return worst
