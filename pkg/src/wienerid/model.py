"""Parametric continuous-time stochastic Wiener models.

A model maps a parameter vector ``theta`` to

* a linear plant driven by the known input (either a rational transfer
  operator or a small state-space realization),
* a linear Ito SDE for the disturbance ``dw = A w dt + B dbeta``,
  observed through ``C``,
* a static output nonlinearity ``y = f(x; theta)`` with ``x = z + C w``.

Every piece carries analytic derivatives with respect to ``theta`` so that
the predictor can propagate exact sensitivities.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ParameterVector",
    "ConstraintSet",
    "TransferOperator",
    "RationalPlant",
    "StateSpacePlant",
    "DisturbanceSde",
    "Nonlinearity",
    "PiecewiseConstant",
    "Exosystem",
    "WienerModel",
    "stability_check",
    "make_example1_model",
    "make_example2_model",
    "hill",
]

STABILITY_MARGIN = 1e-12


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ParameterVector:
    """Parameter values split into plant, disturbance and nonlinearity blocks."""

    values: np.ndarray
    block_dims: tuple[int, int, int]
    names: tuple[str, ...] = ()

    def __post_init__(self):
        values = _frozen(np.ravel(self.values))
        object.__setattr__(self, "values", values)
        dims = tuple(int(v) for v in self.block_dims)
        if len(dims) != 3 or min(dims) < 0:
            raise ValueError(f"block_dims must be three nonnegative ints, got {self.block_dims}")
        if sum(dims) != values.size:
            raise ValueError(f"block_dims {dims} do not sum to dimension {values.size}")
        if not np.all(np.isfinite(values)):
            raise ValueError("parameter vector has nonfinite entries")
        if self.names and len(self.names) != values.size:
            raise ValueError("names must match the parameter dimension")
        object.__setattr__(self, "block_dims", dims)

    @property
    def d(self) -> int:
        return self.values.size

    def block(self, which: str) -> np.ndarray:
        d_g, d_w, _ = self.block_dims
        sl = {"G": slice(0, d_g), "w": slice(d_g, d_g + d_w), "f": slice(d_g + d_w, None)}[which]
        return self.values[sl]


@dataclass(frozen=True)
class ConstraintSet:
    """Membership test for the admissible parameter set."""

    predicate: Callable[[np.ndarray], bool]
    description: str = ""

    def __contains__(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        if not np.all(np.isfinite(theta)):
            return False
        return bool(self.predicate(theta))

    def __repr__(self):
        return f"ConstraintSet({self.description!r})"


@dataclass(frozen=True)
class TransferOperator:
    """Rational operator ``sum(c_j p^j) / (p^n + sum(d_j p^j))``.

    ``num`` holds ``c_0..c_m`` and ``den`` holds ``d_0..d_{n-1}``, both in
    ascending powers of ``p``.
    """

    num: np.ndarray
    den: np.ndarray

    def __post_init__(self):
        num = _frozen(np.atleast_1d(self.num))
        den = _frozen(np.atleast_1d(self.den))
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)
        if den.size < 1:
            raise ValueError("denominator order must be at least 1")
        if num.size - 1 > den.size:
            raise ValueError(f"numerator order {num.size - 1} exceeds denominator order {den.size}")

    @property
    def n(self) -> int:
        return self.den.size

    @property
    def m(self) -> int:
        return self.num.size - 1

    @property
    def n_params(self) -> int:
        return self.n + self.m + 1

    def den_poly(self) -> np.ndarray:
        """Monic denominator, highest power first (``np.roots`` order)."""
        return np.concatenate(([1.0], self.den[::-1]))

    def num_poly(self) -> np.ndarray:
        return self.num[::-1].copy()

    def poles(self) -> np.ndarray:
        return np.roots(self.den_poly())

    def gradient(self, j: int) -> "TransferOperator":
        """Operator ``dG/dtheta_j`` for the coefficient ordering ``[c_0..c_m, d_0..d_{n-1}]``.

        Numerator coefficient ``c_j`` gives ``p^j / D``; denominator coefficient
        ``d_i`` gives ``-p^i N / D^2`` (order ``2n``).
        """
        if not 0 <= j < self.n_params:
            raise IndexError(f"coefficient index {j} outside 0..{self.n_params - 1}")
        if j <= self.m:
            num = np.zeros(j + 1)
            num[j] = 1.0
            return TransferOperator(num, self.den)
        i = j - (self.m + 1)
        # ascending coefficients of -p^i N(p)
        num = -np.concatenate((np.zeros(i), self.num))
        den2 = np.polymul(self.den_poly(), self.den_poly())
        return TransferOperator(num, den2[::-1][:-1])

    def state_space(self):
        """Controllable canonical realization ``(A, B, C)`` of a strictly proper operator."""
        n = self.n
        if self.m >= n:
            raise ValueError("state-space realization requires a strictly proper operator (m < n)")
        A = np.zeros((n, n))
        A[:-1, 1:] = np.eye(n - 1)
        A[-1, :] = -self.den
        B = np.zeros((n, 1))
        B[-1, 0] = 1.0
        C = np.zeros((1, n))
        C[0, : self.num.size] = self.num
        return A, B, C


def stability_check(op: TransferOperator) -> bool:
    """True iff every root of the denominator has real part below ``-1e-12``."""
    if op.n < 1:
        raise ValueError("stability check needs n >= 1")
    return bool(np.all(op.poles().real < -STABILITY_MARGIN))


@dataclass(frozen=True)
class RationalPlant:
    """Transfer-operator plant whose coefficients are entries of ``theta``.

    ``num_index[i]`` is the position of ``c_i`` in ``theta`` and ``den_index[i]``
    the position of ``d_i``.
    """

    num_index: tuple[int, ...]
    den_index: tuple[int, ...]

    def operator(self, theta) -> TransferOperator:
        theta = np.asarray(theta, dtype=float)
        return TransferOperator(theta[list(self.num_index)], theta[list(self.den_index)])

    def coefficient_index(self, j: int) -> int | None:
        """Coefficient position (``[c.., d..]`` ordering) driven by ``theta[j]``."""
        order = tuple(self.num_index) + tuple(self.den_index)
        return order.index(j) if j in order else None

    @property
    def order(self) -> int:
        return len(self.den_index)


@dataclass(frozen=True)
class StateSpacePlant:
    """Plant ``dz = F(theta) z dt + G(theta) u dt``, output ``H z``.

    Used when plant and disturbance share parameters; ``F_jac`` and
    ``G_jac`` return stacks of shape ``(d, n, n)`` and ``(d, n, 1)``.
    """

    F: Callable[[np.ndarray], np.ndarray]
    G: Callable[[np.ndarray], np.ndarray]
    H: np.ndarray
    F_jac: Callable[[np.ndarray], np.ndarray]
    G_jac: Callable[[np.ndarray], np.ndarray]

    @property
    def order(self) -> int:
        return np.asarray(self.H).shape[1]


@dataclass(frozen=True)
class DisturbanceSde:
    """Linear disturbance ``dw = A w dt + B dbeta``, observed as ``C w``.

    The ``*_jac`` callables return the entrywise derivatives stacked along a
    leading parameter axis of length ``d``.
    """

    A: Callable[[np.ndarray], np.ndarray]
    B: Callable[[np.ndarray], np.ndarray]
    C: Callable[[np.ndarray], np.ndarray]
    A_jac: Callable[[np.ndarray], np.ndarray]
    B_jac: Callable[[np.ndarray], np.ndarray]
    C_jac: Callable[[np.ndarray], np.ndarray]
    n_w: int = 1


@dataclass(frozen=True)
class Nonlinearity:
    """Static map ``f(x; theta_f)`` with its ``x`` and ``theta_f`` derivatives.

    ``theta_index`` lists where ``theta_f`` sits inside ``theta``. The callables
    take ``(x, p)`` with ``p = theta[theta_index]``; ``dtheta`` returns an array
    of shape ``x.shape + (len(theta_index),)``.
    """

    value: Callable[[np.ndarray, np.ndarray], np.ndarray]
    dx: Callable[[np.ndarray, np.ndarray], np.ndarray]
    dtheta: Callable[[np.ndarray, np.ndarray], np.ndarray]
    theta_index: tuple[int, ...] = ()

    def params(self, theta) -> np.ndarray:
        return np.asarray(theta, dtype=float)[list(self.theta_index)]


@dataclass(frozen=True)
class PiecewiseConstant:
    """Zero-order-hold input: ``u(t) = values[k]`` for ``times[k] <= t < times[k+1]``."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "times", _frozen(self.times))
        object.__setattr__(self, "values", _frozen(self.values))
        if self.times.shape != self.values.shape:
            raise ValueError("times and values must have the same length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("hold instants must be strictly increasing")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < self.times[0]):
            raise ValueError("time precedes the first hold instant")
        k = np.searchsorted(self.times, t, side="right") - 1
        return self.values[k]


@dataclass(frozen=True)
class Exosystem:
    """Oscillator bank ``u(t) = sum_l amp_l cos(omega_l t + phase_l)``."""

    amplitudes: np.ndarray
    frequencies: np.ndarray
    phases: np.ndarray

    def __post_init__(self):
        for name in ("amplitudes", "frequencies", "phases"):
            object.__setattr__(self, name, _frozen(np.atleast_1d(getattr(self, name))))
        if not (self.amplitudes.shape == self.frequencies.shape == self.phases.shape):
            raise ValueError("amplitudes, frequencies and phases must have equal length")

    @property
    def n_osc(self) -> int:
        return self.amplitudes.size

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        arg = np.multiply.outer(t, self.frequencies) + self.phases
        return np.cos(arg) @ self.amplitudes

    def state(self, t: float) -> np.ndarray:
        """Exosystem state ``[A cos(wt+phi), A sin(wt+phi)]`` per oscillator, interleaved."""
        arg = self.frequencies * t + self.phases
        out = np.empty(2 * self.n_osc)
        out[0::2] = self.amplitudes * np.cos(arg)
        out[1::2] = self.amplitudes * np.sin(arg)
        return out

    def generator(self) -> np.ndarray:
        """Block-diagonal ``[[0, -w], [w, 0]]`` generator of :meth:`state`."""
        L = self.n_osc
        S = np.zeros((2 * L, 2 * L))
        for i, w in enumerate(self.frequencies):
            S[2 * i + 1, 2 * i] = w
            S[2 * i, 2 * i + 1] = -w
        return S

    def output_row(self) -> np.ndarray:
        row = np.zeros(2 * self.n_osc)
        row[0::2] = 1.0
        return row


@dataclass(frozen=True)
class WienerModel:
    """Everything the predictor needs to know about a parametric Wiener model."""

    names: tuple[str, ...]
    block_dims: tuple[int, int, int]
    plant: RationalPlant | StateSpacePlant
    disturbance: DisturbanceSde | None
    nonlinearity: Nonlinearity
    constraint: ConstraintSet
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def d(self) -> int:
        return len(self.names)

    @property
    def n_w(self) -> int:
        return 0 if self.disturbance is None else self.disturbance.n_w

    def parameters(self, values) -> ParameterVector:
        return ParameterVector(values, self.block_dims, self.names)


# --------------------------------------------------------------------------
# Nonlinearities


def _square():
    return Nonlinearity(
        value=lambda x, p: np.square(x),
        dx=lambda x, p: 2.0 * np.asarray(x),
        dtheta=lambda x, p: np.zeros(np.shape(x) + (0,)),
        theta_index=(),
    )


def _hill_value(x, alpha):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.abs(x) ** alpha)


def _hill_ratio(ax, alpha):
    # r / (1 + r)^2 with r = |x|^alpha, written to survive r -> 0 and r -> inf
    with np.errstate(over="ignore", divide="ignore"):
        r = ax**alpha
        return 1.0 / (1.0 / r + 2.0 + r)


def _hill_dx(x, alpha):
    ax = np.abs(x)
    safe = np.where(ax > 0.0, ax, 1.0)
    val = -alpha * np.sign(x) * _hill_ratio(ax, alpha) / safe
    # continuous at 0 with value 0 when alpha > 1
    return np.where(ax > 0.0, val, 0.0)


def _hill_dalpha(x, alpha):
    ax = np.abs(x)
    safe = np.where(ax > 0.0, ax, 1.0)
    val = -np.log(safe) * _hill_ratio(ax, alpha)
    # limit at x = 0 is 0 for alpha > 0
    return np.where(ax > 0.0, val, 0.0)


def hill(theta_index: int) -> Nonlinearity:
    """Hill function ``1 / (1 + |x|^alpha)`` with ``alpha = theta[theta_index]``."""
    return Nonlinearity(
        value=lambda x, p: _hill_value(x, p[0]),
        dx=lambda x, p: _hill_dx(x, p[0]),
        dtheta=lambda x, p: _hill_dalpha(x, p[0])[..., None],
        theta_index=(theta_index,),
    )


# --------------------------------------------------------------------------
# Models used in the numerical studies


def make_example1_model() -> WienerModel:
    """``dx = a x dt + b u dt + sigma dbeta``, ``y = x^2``, ``theta = [a, b, sigma]``.

    Plant and disturbance share the pole ``a``; ``x = z + w`` with
    ``dz = a z + b u`` and ``dw = a w + sigma dbeta``.
    """
    e = np.eye(3)

    plant = StateSpacePlant(
        F=lambda th: np.array([[th[0]]]),
        G=lambda th: np.array([[th[1]]]),
        H=np.array([[1.0]]),
        F_jac=lambda th: e[:, 0].reshape(3, 1, 1),
        G_jac=lambda th: e[:, 1].reshape(3, 1, 1),
    )
    disturbance = DisturbanceSde(
        A=lambda th: np.array([[th[0]]]),
        B=lambda th: np.array([[th[2]]]),
        C=lambda th: np.array([[1.0]]),
        A_jac=lambda th: e[:, 0].reshape(3, 1, 1),
        B_jac=lambda th: e[:, 2].reshape(3, 1, 1),
        C_jac=lambda th: np.zeros((3, 1, 1)),
        n_w=1,
    )
    return WienerModel(
        names=("a", "b", "sigma"),
        block_dims=(2, 1, 0),
        plant=plant,
        disturbance=disturbance,
        nonlinearity=_square(),
        constraint=ConstraintSet(lambda th: th[0] < 0.0, "a < 0"),
        meta={"example": 1},
    )


def _example2_constraint(a_idx: int, b_idx: int, alpha_idx: int) -> ConstraintSet:
    def member(th):
        op = TransferOperator([1.0], [th[b_idx], th[a_idx]])
        return stability_check(op) and th[alpha_idx] > 1.0

    return ConstraintSet(member, "p^2 + a p + b Hurwitz and alpha > 1")


def make_example2_model(include_disturbance: bool = True) -> WienerModel:
    """``x = c/(p^2 + a p + b) u + w``, ``dw = sigma dbeta``, Hill output.

    ``theta = [a, b, c, sigma, alpha]``. With ``include_disturbance=False``
    the disturbance is dropped and ``theta = [a, b, c, alpha]``.
    """
    plant = RationalPlant(num_index=(2,), den_index=(1, 0))
    if not include_disturbance:
        return WienerModel(
            names=("a", "b", "c", "alpha"),
            block_dims=(3, 0, 1),
            plant=plant,
            disturbance=None,
            nonlinearity=hill(3),
            constraint=_example2_constraint(0, 1, 3),
            meta={"example": 2, "baseline": True},
        )
    d = 5
    e = np.eye(d)
    disturbance = DisturbanceSde(
        A=lambda th: np.zeros((1, 1)),
        B=lambda th: np.array([[th[3]]]),
        C=lambda th: np.array([[1.0]]),
        A_jac=lambda th: np.zeros((d, 1, 1)),
        B_jac=lambda th: e[:, 3].reshape(d, 1, 1),
        C_jac=lambda th: np.zeros((d, 1, 1)),
        n_w=1,
    )
    return WienerModel(
        names=("a", "b", "c", "sigma", "alpha"),
        block_dims=(3, 1, 1),
        plant=plant,
        disturbance=disturbance,
        nonlinearity=hill(4),
        constraint=_example2_constraint(0, 1, 4),
        meta={"example": 2},
    )


def finite_difference_jacobian(fun: Callable, theta: Sequence[float], step: float = 1e-6) -> np.ndarray:
    """Central differences of ``fun`` stacked along a leading parameter axis."""
    theta = np.asarray(theta, dtype=float)
    cols = []
    for j in range(theta.size):
        h = step * max(1.0, abs(theta[j]))
        tp, tm = theta.copy(), theta.copy()
        tp[j] += h
        tm[j] -= h
        cols.append((np.asarray(fun(tp)) - np.asarray(fun(tm))) / (2 * h))
    return np.stack(cols)
