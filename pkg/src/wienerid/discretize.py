"""Exact sampling of linear continuous-time dynamics.

One matrix exponential routine drives everything here: zero-order-hold
sampling of transfer operators and their parameter gradients, van Loan
covariance integrals for linear SDEs, and exosystem augmentation for inputs
with known sinusoidal inter-sample behaviour.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .model import DisturbanceSde, Exosystem, TransferOperator

__all__ = [
    "NotPSDError",
    "DiscreteArx",
    "DiscreteSdeStep",
    "GradientSdeStep",
    "ExoStep",
    "mat_exp",
    "van_loan_cov",
    "cov_sqrt",
    "block_cov_sqrt",
    "zoh_state_space",
    "zoh_discretize",
    "gradient_tf_discretize",
    "sde_discretize",
    "gradient_sde_discretize",
    "exo_discretize",
    "StepCache",
]


class NotPSDError(ValueError):
    """Covariance matrix has a significantly negative eigenvalue."""


# Higham (2005) Pade degrees and the 1-norm bounds below which each is accurate.
_PADE_THETA = {
    3: 1.495585217958292e-2,
    5: 2.539398330063230e-1,
    7: 9.504178996162932e-1,
    9: 2.097847961257068e0,
    13: 5.371920351148152e0,
}
_PADE_B = {
    3: (120.0, 60.0, 12.0, 1.0),
    5: (30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0),
    7: (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0),
    9: (
        17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
        2162160.0, 110880.0, 3960.0, 90.0, 1.0,
    ),
    13: (
        64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
        1187353796428800.0, 129060195264000.0, 10559470521600.0,
        670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
        960960.0, 16380.0, 182.0, 1.0,
    ),
}


def _pade_low(A, m):
    b = _PADE_B[m]
    n = A.shape[0]
    ident = np.eye(n)
    A2 = A @ A
    powers = [ident, A2]
    for _ in range((m - 1) // 2 - 1):
        powers.append(powers[-1] @ A2)
    U = sum(b[2 * i + 1] * powers[i] for i in range(len(powers)))
    V = sum(b[2 * i] * powers[i] for i in range(len(powers)))
    return A @ U, V


def _pade13(A):
    b = _PADE_B[13]
    ident = np.eye(A.shape[0])
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A4 @ A2
    U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2) + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident)
    V = A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2) + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident
    return U, V


def mat_exp(A, t: float = 1.0) -> np.ndarray:
    """Matrix exponential ``exp(A t)`` by scaling and squaring with Pade approximants.

    Raises
    ------
    ValueError
        If ``A`` or ``t`` is not finite, or ``t < 0``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not math.isfinite(t) or t < 0:
        raise ValueError(f"time must be finite and nonnegative, got {t}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has nonfinite entries")
    At = A * t
    norm = np.linalg.norm(At, 1)
    if norm == 0.0:
        return np.eye(A.shape[0])
    for m in (3, 5, 7, 9):
        if norm <= _PADE_THETA[m]:
            U, V = _pade_low(At, m)
            return np.linalg.solve(V - U, V + U)
    s = max(0, int(math.ceil(math.log2(norm / _PADE_THETA[13]))))
    U, V = _pade13(At / 2.0**s)
    R = np.linalg.solve(V - U, V + U)
    for _ in range(s):
        R = R @ R
    return R


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("nonfinite input")


def van_loan_cov(A, B, delta: float):
    """Return ``(exp(A delta), int_0^delta e^{As} B B^T e^{A^T s} ds)``.

    The block exponential of ``[[-A, BB^T], [0, A^T]] h`` is evaluated on a
    short step ``h = delta / 2^s`` (it contains ``e^{-Ah}``, which loses
    accuracy when ``||A h||`` is large) and the result is doubled ``s`` times
    with ``Q(2h) = A_h Q(h) A_h^T + Q(h)``. The covariance is symmetrized exactly.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    _check_finite(A, B)
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    n = A.shape[0]
    norm = np.linalg.norm(A, 1) * delta
    s = max(0, int(math.ceil(math.log2(norm / 0.5)))) if norm > 0.5 else 0
    h = delta / 2.0**s
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = -A
    M[:n, n:] = B @ B.T
    M[n:, n:] = A.T
    Phi = mat_exp(M, h)
    A_d = Phi[n:, n:].T
    Q = A_d @ Phi[:n, n:]
    Q = 0.5 * (Q + Q.T)
    for _ in range(s):
        Q = A_d @ Q @ A_d.T + Q
        Q = 0.5 * (Q + Q.T)
        A_d = A_d @ A_d
    if s:
        A_d = mat_exp(A, delta)
    return A_d, Q


def cov_sqrt(Q) -> np.ndarray:
    """Square root ``S`` with ``S S^T = Q``.

    Lower-triangular Cholesky factor when ``Q`` is positive definite,
    otherwise the symmetric eigen-square-root with tiny negative eigenvalues
    (above ``-1e-10 ||Q||``) clipped to zero.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    _check_finite(Q)
    scale = np.linalg.norm(Q, 2) if Q.size else 0.0
    if not np.allclose(Q, Q.T, rtol=0.0, atol=1e-10 * max(scale, 1.0)):
        raise ValueError("covariance matrix is not symmetric")
    if scale == 0.0:
        return np.zeros_like(Q)
    try:
        return np.linalg.cholesky(Q)
    except np.linalg.LinAlgError:
        pass
    lam, V = np.linalg.eigh(0.5 * (Q + Q.T))
    if lam.min() < -1e-10 * scale:
        raise NotPSDError(f"covariance has eigenvalue {lam.min():.3e} (norm {scale:.3e})")
    lam = np.clip(lam, 0.0, None)
    return (V * np.sqrt(lam)) @ V.T


def block_cov_sqrt(Q, n_top: int, top=None) -> np.ndarray:
    """Block lower-triangular square root of ``Q`` split after ``n_top`` rows.

    The leading block is ``top`` if given (it must satisfy
    ``top top^T = Q[:n_top, :n_top]``), else ``cov_sqrt`` of that block. The
    factor's first ``n_top`` rows then touch only the first ``n_top`` noise
    coordinates, which keeps a shared sub-state driven identically whatever
    the trailing block is. Works for rank-deficient ``Q``.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    n = Q.shape[0]
    L11 = cov_sqrt(Q[:n_top, :n_top]) if top is None else np.atleast_2d(top)
    # singular values below sqrt(eps) are round-off of a rank-deficient block
    L21 = Q[n_top:, :n_top] @ np.linalg.pinv(L11.T, rcond=1e-7)
    S = Q[n_top:, n_top:] - L21 @ L21.T
    scale = max(np.linalg.norm(Q, 2), 1e-300)
    S = 0.5 * (S + S.T)
    lam, V = np.linalg.eigh(S) if S.size else (np.zeros(0), S)
    if S.size and lam.min() < -1e-9 * scale:
        raise NotPSDError(f"Schur complement has eigenvalue {lam.min():.3e}")
    L22 = (V * np.sqrt(np.clip(lam, 0.0, None))) @ V.T if S.size else S
    L = np.zeros((n, n))
    L[:n_top, :n_top] = L11
    L[n_top:, :n_top] = L21
    L[n_top:, n_top:] = L22
    return L


@dataclass(frozen=True)
class DiscreteArx:
    """``G(z^-1) = sum_r b_r z^-r / (1 + sum_r a_r z^-r)``, ``r = 1..n``."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if self.a.shape != self.b.shape:
            raise ValueError("a and b must have the same length")
        if not (np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.b))):
            raise ValueError("nonfinite ARX coefficient")

    @property
    def n(self) -> int:
        return self.a.size

    @property
    def eta(self) -> np.ndarray:
        return np.concatenate((self.a, self.b))

    def simulate(self, u) -> np.ndarray:
        """Response from rest: ``z_k`` for ``k = 0..len(u)-1`` given held inputs ``u_k``."""
        from scipy.signal import lfilter

        return lfilter(np.concatenate(([0.0], self.b)), np.concatenate(([1.0], self.a)), u)


def zoh_state_space(F, G, delta: float):
    """ZOH sampling of ``dx = F x + G u``: returns ``(exp(F delta), int_0^delta e^{Fs} ds G)``."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    G = np.asarray(G, dtype=float).reshape(F.shape[0], -1)
    n, q = G.shape
    M = np.zeros((n + q, n + q))
    M[:n, :n] = F
    M[:n, n:] = G
    Phi = mat_exp(M, delta)
    return Phi[:n, :n], Phi[:n, n:]


def _arx_from_state_space(A_d, B_d, C) -> DiscreteArx:
    n = A_d.shape[0]
    a = np.real(np.poly(A_d))[1:]
    h = np.empty(n)
    v = B_d[:, 0]
    for r in range(n):
        h[r] = C[0] @ v
        v = A_d @ v
    # (1 + sum a_i z^-i) * sum h_r z^-r, truncated at z^-n
    b = np.array([h[r] + np.dot(a[:r], h[r - 1 :: -1][:r]) for r in range(n)])
    return DiscreteArx(a, b)


def zoh_discretize(op: TransferOperator, delta: float) -> DiscreteArx:
    """ARX coefficients of the zero-order-hold equivalent of ``op``."""
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    A, B, C = op.state_space()
    if not np.any(C):
        n = op.n
        return DiscreteArx(np.real(np.poly(mat_exp(A, delta)))[1:], np.zeros(n))
    A_d, B_d = zoh_state_space(A, B, delta)
    return _arx_from_state_space(A_d, B_d, C)


def gradient_tf_discretize(op: TransferOperator, j: int, delta: float) -> DiscreteArx:
    """ZOH discretization of ``dG/dtheta_j``; ``j`` indexes ``[c_0..c_m, d_0..d_{n-1}]``."""
    return zoh_discretize(op.gradient(j), delta)


@dataclass(frozen=True)
class DiscreteSdeStep:
    A: np.ndarray
    B: np.ndarray
    delta: float


@dataclass(frozen=True)
class GradientSdeStep:
    F: np.ndarray
    L: np.ndarray
    delta: float


def sde_discretize(sde: DisturbanceSde, theta, delta: float) -> DiscreteSdeStep:
    A_d, Q = van_loan_cov(sde.A(theta), sde.B(theta), delta)
    return DiscreteSdeStep(A_d, cov_sqrt(Q), delta)


def gradient_sde_discretize(
    sde: DisturbanceSde, theta, j: int, delta: float, top: np.ndarray | None = None
) -> GradientSdeStep:
    """Exact step of the augmented state ``[w; dw/dtheta_j]``.

    Drift ``[[A, 0], [A_j, A]]`` and dispersion ``[B; B_j]``. The noise
    factor is block lower-triangular so that the ``w`` part is driven exactly
    as in :func:`sde_discretize` (pass that step's ``B`` as ``top``).
    """
    theta = np.asarray(theta, dtype=float)
    if not 0 <= j < theta.size:
        raise IndexError(f"parameter index {j} outside 0..{theta.size - 1}")
    A = np.atleast_2d(sde.A(theta))
    B = np.atleast_2d(sde.B(theta))
    n = A.shape[0]
    F = np.zeros((2 * n, 2 * n))
    F[:n, :n] = A
    F[n:, :n] = sde.A_jac(theta)[j]
    F[n:, n:] = A
    Lc = np.vstack((B, np.atleast_2d(sde.B_jac(theta)[j])))
    F_d, Q = van_loan_cov(F, Lc, delta)
    return GradientSdeStep(F_d, block_cov_sqrt(Q, n, top=top), delta)


@dataclass(frozen=True)
class ExoStep:
    """``x(t+delta) = A x(t) + g + B xi`` with ``xi`` standard normal."""

    A: np.ndarray
    g: np.ndarray
    B: np.ndarray
    delta: float


def exo_transition(F, G, exo: Exosystem, delta: float):
    """``(exp(F delta), Gamma)`` where ``Gamma @ exo.state(t)`` is the forced response over ``[t, t+delta]``."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    G = np.asarray(G, dtype=float).reshape(F.shape[0], 1)
    n = F.shape[0]
    q = 2 * exo.n_osc
    M = np.zeros((n + q, n + q))
    M[:n, :n] = F
    M[:n, n:] = G @ exo.output_row()[None, :]
    M[n:, n:] = exo.generator()
    Phi = mat_exp(M, delta)
    return Phi[:n, :n], Phi[:n, n:]


def exo_discretize(F, G, B_noise, exo: Exosystem, t_k: float, delta: float) -> ExoStep:
    """Exact affine-Gaussian step of ``dx = F x dt + G u dt + B_noise dbeta`` with exosystem input."""
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    F = np.atleast_2d(np.asarray(F, dtype=float))
    A_d, Gamma = exo_transition(F, G, exo, delta)
    g = Gamma @ exo.state(t_k)
    if B_noise is None or not np.any(B_noise):
        B_d = np.zeros_like(F)
    else:
        _, Q = van_loan_cov(F, B_noise, delta)
        B_d = cov_sqrt(Q)
    return ExoStep(A_d, g, B_d, delta)


class StepCache:
    """Small LRU map from ``(tag, theta, delta)`` to discretization results.

    ``delta`` is quantized to 1e-9. Correctness never depends on a hit.
    """

    def __init__(self, maxsize: int = 64):
        self.maxsize = maxsize
        self._data: OrderedDict = OrderedDict()
        self.hits = 0
        self.misses = 0

    @staticmethod
    def key(tag, theta, delta):
        return (tag, np.asarray(theta, dtype=float).tobytes(), round(delta * 1e9))

    def get_or_build(self, tag, theta, delta, build):
        key = self.key(tag, theta, delta)
        try:
            value = self._data[key]
        except KeyError:
            self.misses += 1
            value = build()
            self._data[key] = value
            if len(self._data) > self.maxsize:
                self._data.popitem(last=False)
            return value
        self.hits += 1
        self._data.move_to_end(key)
        return value
