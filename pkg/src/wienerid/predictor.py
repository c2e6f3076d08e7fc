"""Recursive Monte-Carlo output-error predictor and its parameter gradient.

At each sample the disturbance is simulated along ``M`` paths on two
independent noise channels: the ``"y"`` channel produces the predictor mean
``y_bar`` and the ``"psi"`` channel produces the gradient ``psi_bar``. The
deterministic plant response and its sensitivities are carried either by
ARX regressors (transfer-operator plants, ZOH input) or by an exactly
sampled sensitivity state (state-space plants, ZOH or exosystem input).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .discretize import (
    StepCache,
    exo_transition,
    gradient_sde_discretize,
    gradient_tf_discretize,
    sde_discretize,
    zoh_discretize,
    zoh_state_space,
)
from .model import Exosystem, RationalPlant, StateSpacePlant, WienerModel
from .streams import NoiseStreams

__all__ = [
    "NumericalDivergence",
    "DiscretizedStep",
    "PredictorState",
    "PredictionOutput",
    "OEPredictor",
    "predictor_step",
    "estimating_vector",
]


class NumericalDivergence(FloatingPointError):
    """A nonfinite value appeared in the predictor or estimator."""

    def __init__(self, k: int, what: str = "value"):
        super().__init__(f"nonfinite {what} at step {k}")
        self.k = k


@dataclass(frozen=True)
class DiscretizedStep:
    """Discrete matrices for one sampling interval, evaluated at one ``theta``."""

    delta: float
    # transfer-operator path
    eta: np.ndarray | None = None
    eta_grad: dict = field(default_factory=dict)
    # state-space path: s_k = plant_A s_{k-1} + plant_g
    plant_A: np.ndarray | None = None
    plant_g: np.ndarray | None = None
    # disturbance
    w_A: np.ndarray | None = None
    w_B: np.ndarray | None = None
    C: np.ndarray | None = None
    C_jac: np.ndarray | None = None
    grad_blocks: dict = field(default_factory=dict)  # j -> (F21, F22, L21, L22)


@dataclass
class PredictorState:
    """Everything the recursion carries from one sample to the next.

    ``t`` and ``u`` are the time of the last processed sample and the input
    held from it; ``w_psi`` together with ``w_grad[:, j]`` forms the
    augmented state ``zeta^(j)`` of every path.
    """

    k: int
    t: float
    u: float
    w_y: np.ndarray
    w_psi: np.ndarray
    w_grad: np.ndarray
    phi: np.ndarray | None = None
    phi_grad: dict = field(default_factory=dict)
    s: np.ndarray | None = None

    def zeta(self) -> np.ndarray:
        """Augmented states of shape ``(M, d, 2 n_w)``."""
        M, d, n_w = self.w_grad.shape
        top = np.broadcast_to(self.w_psi[:, None, :], (M, d, n_w))
        return np.concatenate((top, self.w_grad), axis=2)

    def copy(self) -> "PredictorState":
        return replace(
            self,
            w_y=self.w_y.copy(),
            w_psi=self.w_psi.copy(),
            w_grad=self.w_grad.copy(),
            phi=None if self.phi is None else self.phi.copy(),
            phi_grad={j: v.copy() for j, v in self.phi_grad.items()},
            s=None if self.s is None else self.s.copy(),
        )


@dataclass(frozen=True)
class PredictionOutput:
    y_bar: float
    psi_bar: np.ndarray
    eps: float
    z: float = 0.0
    y_paths: np.ndarray | None = None
    psi_paths: np.ndarray | None = None


def estimating_vector(out: PredictionOutput) -> np.ndarray:
    """Unbiased estimate ``psi_bar * eps`` of the estimating function.

    With ``psi = d y_hat / d theta`` this is minus the gradient of the
    instantaneous cost ``eps**2 / 2``.
    """
    return out.psi_bar * out.eps


def _shift(reg: np.ndarray, z: float, u: float) -> np.ndarray:
    n = reg.size // 2
    out = np.empty_like(reg)
    out[0] = -z
    out[1:n] = reg[: n - 1]
    out[n] = u
    out[n + 1 :] = reg[n : 2 * n - 1]
    return out


class OEPredictor:
    """Builds discretizations and advances :class:`PredictorState` for one model.

    Parameters
    ----------
    model : WienerModel
    M : int
        Number of Monte-Carlo paths per channel.
    exosystem : Exosystem, optional
        Known sinusoidal input; required for exosystem-driven state-space plants.
    keep_paths : bool
        Store per-path outputs in :class:`PredictionOutput` (diagnostics).
    memoryless : bool
        Restart the disturbance paths from zero at every sample, so each
        ``w_{m,k}`` is a single fresh increment. Off by default; the
        recursion then propagates ``w_{m,k-1}`` as usual.
    """

    def __init__(self, model: WienerModel, M: int, exosystem: Exosystem | None = None,
                 keep_paths: bool = False, cache: StepCache | None = None, memoryless: bool = False):
        if M < 1:
            raise ValueError("M must be a positive integer")
        self.model = model
        self.M = int(M)
        self.exosystem = exosystem
        self.keep_paths = keep_paths
        self.memoryless = bool(memoryless)
        self.cache = cache if cache is not None else StepCache()
        if isinstance(model.plant, RationalPlant) and exosystem is not None:
            raise ValueError("transfer-operator plants support zero-order-hold input only")

    # ------------------------------------------------------------------
    def initial_state(self, t0: float = 0.0, u0: float = 0.0, phi=None, phi_grad=None,
                      theta=None, noise: NoiseStreams | None = None,
                      stationary: bool = False) -> PredictorState:
        """Zero disturbance states and regressors holding only ``u0``.

        With ``stationary=True`` the ``w`` parts start from the stationary law
        of the disturbance at ``theta`` (requires a Hurwitz drift).
        """
        m = self.model
        d, n_w, M = m.d, m.n_w, self.M
        w_y = np.zeros((M, n_w))
        w_psi = np.zeros((M, n_w))
        if stationary and n_w:
            from scipy.linalg import solve_continuous_lyapunov

            A = m.disturbance.A(theta)
            if not np.all(np.linalg.eigvals(A).real < 0):
                raise ValueError("stationary initialization needs a Hurwitz drift")
            B = m.disturbance.B(theta)
            P = solve_continuous_lyapunov(A, -B @ B.T)
            S = np.linalg.cholesky(0.5 * (P + P.T))
            draws = noise.normal("init", 0, (2, M, n_w))
            w_y = draws[0] @ S.T
            w_psi = draws[1] @ S.T
        state = PredictorState(k=0, t=float(t0), u=float(u0), w_y=w_y, w_psi=w_psi,
                               w_grad=np.zeros((M, d, n_w)))
        if isinstance(m.plant, RationalPlant):
            # zero past outputs and inputs; u0 is already known at t0
            n = m.plant.order
            if phi is None:
                phi = np.zeros(2 * n)
                phi[n] = u0
            state.phi = np.array(phi, dtype=float)
            grads = {}
            for j in range(d):
                ci = m.plant.coefficient_index(j)
                if ci is None:
                    continue
                n_j = n if ci < len(m.plant.num_index) else 2 * n
                given = None if phi_grad is None else phi_grad.get(j)
                if given is None:
                    given = np.zeros(2 * n_j)
                    given[n_j] = u0
                grads[j] = np.array(given, dtype=float)
            state.phi_grad = grads
        else:
            state.s = np.zeros(m.plant.order * (d + 1))
        return state

    # ------------------------------------------------------------------
    def _plant_tf(self, theta, delta):
        plant = self.model.plant
        op = plant.operator(theta)
        eta = zoh_discretize(op, delta).eta
        eta_grad = {}
        for j in range(self.model.d):
            ci = plant.coefficient_index(j)
            if ci is not None:
                eta_grad[j] = gradient_tf_discretize(op, ci, delta).eta
        return eta, eta_grad

    def _sensitivity_system(self, theta):
        plant: StateSpacePlant = self.model.plant
        d = self.model.d
        F = np.atleast_2d(plant.F(theta))
        G = np.asarray(plant.G(theta), dtype=float).reshape(F.shape[0], 1)
        Fj = plant.F_jac(theta)
        Gj = plant.G_jac(theta)
        n = F.shape[0]
        N = n * (d + 1)
        S = np.zeros((N, N))
        Gs = np.zeros((N, 1))
        S[:n, :n] = F
        Gs[:n] = G
        for j in range(d):
            blk = slice(n * (j + 1), n * (j + 2))
            S[blk, blk] = F
            S[blk, :n] = Fj[j]
            Gs[blk] = np.reshape(Gj[j], (n, 1))
        return S, Gs

    def _plant_ss(self, theta, delta, t_prev, u_prev):
        S, Gs = self._sensitivity_system(theta)
        if self.exosystem is not None:
            A_s, Gamma = exo_transition(S, Gs, self.exosystem, delta)
            g = Gamma @ self.exosystem.state(t_prev)
        else:
            A_s, B_s = zoh_state_space(S, Gs, delta)
            g = B_s[:, 0] * u_prev
        return A_s, g

    def _disturbance(self, theta, delta):
        m = self.model
        sde = m.disturbance
        step = sde_discretize(sde, theta, delta)
        A_jac = sde.A_jac(theta)
        B_jac = sde.B_jac(theta)
        n_w = sde.n_w
        blocks = {}
        for j in range(m.d):
            if not (np.any(A_jac[j]) or np.any(B_jac[j])):
                continue
            g = gradient_sde_discretize(sde, theta, j, delta, top=step.B)
            blocks[j] = (g.F[n_w:, :n_w], g.F[n_w:, n_w:], g.L[n_w:, :n_w], g.L[n_w:, n_w:])
        return step.A, step.B, blocks

    def discretize(self, theta, t_prev: float, t: float, u_prev: float) -> DiscretizedStep:
        """All discrete matrices for the interval ``[t_prev, t]`` at ``theta``."""
        theta = np.asarray(theta, dtype=float)
        delta = float(t - t_prev)
        if not delta > 0:
            raise ValueError(f"sampling interval must be positive, got {delta}")
        m = self.model
        kw = {}
        if isinstance(m.plant, RationalPlant):
            kw["eta"], kw["eta_grad"] = self.cache.get_or_build(
                "tf", theta, delta, lambda: self._plant_tf(theta, delta))
        else:
            kw["plant_A"], kw["plant_g"] = self._plant_ss(theta, delta, t_prev, u_prev)
        if m.disturbance is not None:
            kw["w_A"], kw["w_B"], kw["grad_blocks"] = self.cache.get_or_build(
                "sde", theta, delta, lambda: self._disturbance(theta, delta))
            kw["C"] = np.atleast_2d(m.disturbance.C(theta))
            kw["C_jac"] = np.asarray(m.disturbance.C_jac(theta)).reshape(m.d, 1, -1)
        else:
            kw["w_A"] = np.zeros((0, 0))
            kw["w_B"] = np.zeros((0, 0))
            kw["C"] = np.zeros((1, 0))
            kw["C_jac"] = np.zeros((m.d, 1, 0))
        return DiscretizedStep(delta=delta, **kw)

    # ------------------------------------------------------------------
    def step(self, state: PredictorState, theta, y: float, t: float, u: float,
             noise: NoiseStreams, steps: DiscretizedStep | None = None):
        """Process sample ``(t_k, y_k)``; ``u`` is the input held from ``t_k`` on."""
        if steps is None:
            steps = self.discretize(theta, state.t, t, state.u)
        return predictor_step(state, theta, self.model, steps, y, t, u, noise, self.M,
                              keep_paths=self.keep_paths, memoryless=self.memoryless)


def predictor_step(state: PredictorState, theta, model: WienerModel, steps: DiscretizedStep,
                   y: float, t: float, u: float, noise: NoiseStreams, M: int,
                   keep_paths: bool = False, memoryless: bool = False):
    """One pass of the predictor recursion; returns ``(PredictionOutput, new_state)``.

    ``steps`` must be built at ``theta`` for the interval ``[state.t, t]``.
    With ``memoryless`` the disturbance states are taken as zero before the
    step (see :class:`OEPredictor`).
    """
    theta = np.asarray(theta, dtype=float)
    k = state.k + 1
    d = model.d
    n_w = model.n_w
    nl = model.nonlinearity
    p = nl.params(theta)

    w_y, w_psi, w_grad = state.w_y, state.w_psi, state.w_grad
    if memoryless:
        w_y, w_psi, w_grad = np.zeros_like(w_y), np.zeros_like(w_psi), np.zeros_like(w_grad)

    # y channel: advance w, predict
    if n_w:
        beta_y = noise.normal("y", k, (M, n_w))
        w_y = w_y @ steps.w_A.T + beta_y @ steps.w_B.T

    if steps.eta is not None:
        z = float(state.phi @ steps.eta)
        zg = np.zeros(d)
        for j, eta_j in steps.eta_grad.items():
            zg[j] = state.phi_grad[j] @ eta_j
        s_new = None
    else:
        s_new = steps.plant_A @ state.s + steps.plant_g
        n_p = model.plant.order
        H = np.asarray(model.plant.H, dtype=float)
        z = float(H[0] @ s_new[:n_p])
        zg = s_new[n_p:].reshape(d, n_p) @ H[0]

    C = steps.C
    x_y = z + w_y @ C[0]
    y_paths = nl.value(x_y, p)
    y_bar = float(np.mean(y_paths))

    # psi channel: advance zeta = [w; dw/dtheta_j], form gradients
    if n_w:
        beta = noise.normal("psi", k, (M, 2 * n_w))
        b_top, b_bot = beta[:, :n_w], beta[:, n_w:]
        w_grad_new = w_grad @ steps.w_A.T
        for j, (F21, F22, L21, L22) in steps.grad_blocks.items():
            w_grad_new[:, j] = w_psi @ F21.T + w_grad[:, j] @ F22.T + b_top @ L21.T + b_bot @ L22.T
        w_psi = w_psi @ steps.w_A.T + b_top @ steps.w_B.T
        w_grad = w_grad_new

    x_psi = z + w_psi @ C[0]
    x_grad = zg[None, :] + w_psi @ steps.C_jac[:, 0, :].T + w_grad @ C[0]
    f_theta = np.zeros((M, d))
    if nl.theta_index:
        f_theta[:, list(nl.theta_index)] = nl.dtheta(x_psi, p)
    y_grad = f_theta + nl.dx(x_psi, p)[:, None] * x_grad
    # psi = d y_hat / d theta, so that theta + gamma R^-1 psi eps descends the cost
    psi_paths = y_grad
    psi_bar = psi_paths.mean(axis=0)
    eps = float(y - y_bar)

    if not (np.isfinite(y_bar) and np.isfinite(eps) and np.all(np.isfinite(psi_bar))):
        raise NumericalDivergence(k, "prediction")

    new = PredictorState(k=k, t=float(t), u=float(u), w_y=w_y, w_psi=w_psi, w_grad=w_grad)
    if steps.eta is not None:
        new.phi = _shift(state.phi, z, u)
        new.phi_grad = {j: _shift(reg, zg[j], u) for j, reg in state.phi_grad.items()}
    else:
        new.s = s_new
    out = PredictionOutput(
        y_bar=y_bar, psi_bar=psi_bar, eps=eps, z=z,
        y_paths=y_paths if keep_paths else None,
        psi_paths=psi_paths if keep_paths else None,
    )
    return out, new
