"""Forward/backward transfer-matrix solver on a truncated box.

Time is cut into ``K`` slabs of width ``dt``.  Within slab ``k`` a path pays
``exp(beta * dW_x(k))`` at the site it occupies at the slab start and then
moves with the continuous-time walk kernel ``p = exp(kappa dt (P - I))``
(restricted to the box, absorbing outside).  The discrete partition function
is then exactly the Feynman-Kac weight of such paths, which keeps brute-force
enumeration an exact oracle.

Each step is renormalized by its maximum and the log-constant is stored.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import poisson

from .environment import lattice_sites

KERNEL_ORDER_CAP = 64
DENSE_MAX = 400


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class SolverParams:
    """Discretization of one polymer problem.

    ``R=None`` picks ``ceil(kappa T + 6 sqrt(kappa T) + 10)``.
    """

    kappa: float
    beta: float
    T: float
    dt: float
    d: int = 1
    R: int | None = None
    kernel_tol: float = 1e-12

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if not 0 < self.dt <= self.T:
            raise ValueError("need 0 < dt <= T")
        if abs(self.T / self.dt - round(self.T / self.dt)) > 1e-9:
            raise ValueError("T / dt must be an integer")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if not 0 < self.kernel_tol <= 1e-6:
            raise ValueError("kernel_tol must lie in (0, 1e-6]")
        if self.R is None:
            kt = self.kappa * self.T
            object.__setattr__(self, "R", int(math.ceil(kt + 6 * math.sqrt(kt) + 10)))
        if self.R < 0:
            raise ValueError("R must be >= 0")

    @property
    def K(self) -> int:
        return int(round(self.T / self.dt))

    def with_beta(self, beta: float) -> "SolverParams":
        return SolverParams(self.kappa, beta, self.T, self.dt, self.d, self.R, self.kernel_tol)


class Box:
    """Cube ``|x|_inf <= R`` in Z^d, flattened in lexicographic order."""

    def __init__(self, d: int, R: int):
        self.d, self.R = d, R
        self.shape = (2 * R + 1,) * d
        self.size = int(np.prod(self.shape))
        self.sites = lattice_sites(d, R)
        self.origin = self.size // 2

    def site(self, flat_index: int) -> tuple[int, ...]:
        return tuple(int(c) for c in self.sites[flat_index])

    def radius(self) -> np.ndarray:
        return np.abs(self.sites).max(axis=1) if self.size else np.zeros(0, int)


class StepKernel:
    """Truncated Poisson series for ``exp(kappa dt (P - I))`` on a box.

    ``P`` is the nearest-neighbour averaging operator with zero outside the
    box, so mass that leaves is lost.  The operator is applied by array
    shifts; :meth:`matrix` materializes it for small boxes.
    """

    def __init__(self, kappa: float, dt: float, box: Box, tol: float = 1e-12):
        self.box = box
        self.rate = kappa * dt
        order = 0
        while poisson.sf(order, self.rate) >= tol:
            order += 1
            if order > KERNEL_ORDER_CAP:
                raise KernelError(
                    f"kappa*dt = {self.rate:g} needs more than {KERNEL_ORDER_CAP} "
                    "series terms; use a smaller dt")
        self.order = order
        self.coef = poisson.pmf(np.arange(order + 1), self.rate)
        self.tail = float(poisson.sf(order, self.rate))
        self._dense = self._series_matrix() if box.size <= DENSE_MAX else None
        self._leaks: dict[int, float] = {}

    def _neighbour_mean(self, g: np.ndarray) -> np.ndarray:
        out = np.zeros_like(g)
        for ax in range(g.ndim):
            lo = [slice(None)] * g.ndim
            hi = [slice(None)] * g.ndim
            lo[ax], hi[ax] = slice(0, -1), slice(1, None)
            out[tuple(hi)] += g[tuple(lo)]
            out[tuple(lo)] += g[tuple(hi)]
        return out / (2 * g.ndim)

    def apply(self, v: np.ndarray) -> np.ndarray:
        """``(p v)(x) = sum_y p(x, y) v(y)``; symmetric, so also ``v p``."""
        if self._dense is not None:
            return self._dense @ v
        return self._apply_series(v)

    def _apply_series(self, v: np.ndarray) -> np.ndarray:
        g = v.reshape(self.box.shape)
        acc = self.coef[0] * g
        term = g
        for c in self.coef[1:]:
            term = self._neighbour_mean(term)
            acc = acc + c * term
        return acc.reshape(-1)

    def _series_matrix(self) -> np.ndarray:
        eye = np.eye(self.box.size)
        return np.stack([self._apply_series(eye[:, j]) for j in range(self.box.size)], axis=1)

    def matrix(self) -> np.ndarray:
        return self._dense.copy() if self._dense is not None else self._series_matrix()

    def leak(self, K: int) -> float:
        """Free-walk mass lost after ``K`` steps (boundary plus series tail)."""
        if K not in self._leaks:
            q = np.zeros(self.box.size)
            q[self.box.origin] = 1.0
            for _ in range(K):
                q = self.apply(q)
            self._leaks[K] = float(1.0 - q.sum())
        return self._leaks[K]


def build_kernel(params: SolverParams) -> StepKernel:
    return StepKernel(params.kappa, params.dt, Box(params.d, params.R), params.kernel_tol)


def grid_times(T: float, K: int) -> np.ndarray:
    """``k T / K`` for ``k = 0..K``; shared by every grid-based routine."""
    return T * np.arange(K + 1) / K


def grid_increments(env, params: SolverParams, box: Box | None = None) -> np.ndarray:
    """``dW_x(k)`` for every box site and slab, shape ``(K, n_sites)``."""
    box = box or Box(params.d, params.R)
    K = params.K
    if env.horizon < params.T * (1 - 1e-12):
        raise ValueError("environment horizon shorter than T")
    times = np.minimum(grid_times(params.T, K), env.horizon)
    vals = env.values(np.repeat(box.sites, K + 1, axis=0), np.tile(times, box.size))
    return np.diff(vals.reshape(box.size, K + 1), axis=1).T.copy()


def restrict_increments(increments: np.ndarray, big: Box, small: Box) -> np.ndarray:
    """Columns of ``increments`` (laid out on ``big``) that belong to ``small``."""
    if small.d != big.d or small.R > big.R:
        raise ValueError("small box must sit inside the big one")
    idx = np.ravel_multi_index(tuple((small.sites + big.R).T), big.shape)
    return increments[:, idx]


@dataclass
class SolverFields:
    """Log-normalized forward and backward arrays.

    True values are ``Z_k = forward[k] * exp(log_fwd[k])`` and
    ``v_k = backward[k] * exp(log_bwd[k])``.
    """

    params: SolverParams
    box: Box
    forward: np.ndarray
    log_fwd: np.ndarray
    logZ: float
    backward: np.ndarray | None = None
    log_bwd: np.ndarray | None = None
    leak: float = float("nan")
    consistency_error: float = float("nan")
    extra: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.forward.shape[0] - 1


def _weights(increments: np.ndarray, beta: float) -> tuple[np.ndarray, np.ndarray]:
    x = beta * increments
    shift = x.max(axis=1)
    return np.exp(x - shift[:, None]), shift


def solve_forward(env, params: SolverParams, increments: np.ndarray | None = None,
                  kernel: StepKernel | None = None) -> SolverFields:
    kernel = kernel or build_kernel(params)
    box = kernel.box
    if increments is None:
        increments = grid_increments(env, params, box)
    K = params.K
    w, shift = _weights(increments, params.beta)
    fwd = np.empty((K + 1, box.size))
    logs = np.zeros(K + 1)
    z = np.zeros(box.size)
    z[box.origin] = 1.0
    fwd[0] = z
    for k in range(K):
        z = kernel.apply(z * w[k])
        c = z.max()
        assert c > 0, "forward slice underflowed"
        z /= c
        fwd[k + 1] = z
        logs[k + 1] = logs[k] + math.log(c) + shift[k]
    logZ = math.log(z.sum()) + logs[K]
    return SolverFields(params, box, fwd, logs, logZ, leak=kernel.leak(K))


def solve_backward(env, params: SolverParams, increments: np.ndarray | None = None,
                   kernel: StepKernel | None = None) -> tuple[np.ndarray, np.ndarray]:
    kernel = kernel or build_kernel(params)
    box = kernel.box
    if increments is None:
        increments = grid_increments(env, params, box)
    K = params.K
    w, shift = _weights(increments, params.beta)
    bwd = np.empty((K + 1, box.size))
    logs = np.zeros(K + 1)
    v = np.ones(box.size)
    bwd[K] = v
    for k in range(K - 1, -1, -1):
        v = w[k] * kernel.apply(v)
        c = v.max()
        assert c > 0, "backward slice underflowed"
        v /= c
        bwd[k] = v
        logs[k] = logs[k + 1] + math.log(c) + shift[k]
    return bwd, logs


def solve(env, params: SolverParams, increments: np.ndarray | None = None,
          kernel: StepKernel | None = None) -> SolverFields:
    """Forward and backward sweeps plus the consistency audit."""
    kernel = kernel or build_kernel(params)
    if increments is None:
        increments = grid_increments(env, params, kernel.box)
    fields = solve_forward(env, params, increments, kernel)
    fields.backward, fields.log_bwd = solve_backward(env, params, increments, kernel)
    fields.consistency_error = consistency_error(fields)
    return fields


def consistency_error(fields: SolverFields) -> float:
    """Max relative deviation of ``sum_x Z_k(x) v_k(x)`` from its k = K value."""
    s = np.einsum("kx,kx->k", fields.forward, fields.backward)
    logs = np.log(s) + fields.log_fwd + fields.log_bwd
    return float(np.max(np.abs(np.expm1(logs - logs[-1]))))


def adapted_integral(fields: SolverFields, increments: np.ndarray) -> float:
    """``sum_k sum_x mu_k(x) dW_x(k)`` with ``mu_k`` the end-point law at ``t_k``.

    ``mu_k`` only sees increments before slab ``k``, so this has mean zero
    over environments; ``beta`` times it is the discrete Ito martingale of
    ``log Z``.
    """
    return float(np.sum(endpoint_law(fields)[:-1] * increments))


def endpoint_law(fields: SolverFields, k: int | None = None) -> np.ndarray:
    """Law of ``X(t_k)`` under the polymer of length ``t_k``; all k if None."""
    z = fields.forward if k is None else fields.forward[k]
    return z / z.sum(axis=-1, keepdims=True)


def marginal_T(fields: SolverFields, k: int | None = None) -> np.ndarray:
    """Law of ``X(t_k)`` under the polymer of length ``T``; all k if None."""
    if fields.backward is None:
        raise ValueError("backward sweep missing; use solve()")
    m = fields.forward * fields.backward if k is None else fields.forward[k] * fields.backward[k]
    return m / m.sum(axis=-1, keepdims=True)


@dataclass
class OverlapReport:
    I: float
    J: float
    a: float
    b: float
    abar: float
    bbar: float
    x_star: np.ndarray
    y_star: np.ndarray
    logZ: float
    leak: float = float("nan")

    def sandwich_violation(self) -> float:
        """Largest amount by which ``b <= a <= 2b`` (both versions) fails."""
        return max(self.b - self.a, self.a - 2 * self.b,
                   self.bbar - self.abar, self.abar - 2 * self.bbar, 0.0)

    CSV_COLUMNS = ("seed", "d", "kappa", "beta", "T", "dt", "R", "logZ",
                   "I", "J", "a", "b", "abar", "bbar", "leak")

    def row(self, seed: int, params: SolverParams) -> dict:
        return {"seed": seed, "d": params.d, "kappa": params.kappa, "beta": params.beta,
                "T": params.T, "dt": params.dt, "R": params.R, "logZ": self.logZ,
                "I": self.I, "J": self.J, "a": self.a, "b": self.b,
                "abar": self.abar, "bbar": self.bbar, "leak": self.leak}


def _collision_and_miss(laws: np.ndarray) -> tuple[float, float, np.ndarray]:
    head = laws[:-1]
    collision = float(np.mean(np.einsum("kx,kx->k", head, head)))
    fav = np.argmax(laws, axis=1)
    miss = float(np.mean(1.0 - head[np.arange(head.shape[0]), fav[:-1]]))
    return collision, miss, fav


def overlaps_and_localization(env=None, params: SolverParams | None = None,
                              fields: SolverFields | None = None) -> OverlapReport:
    """Both overlaps and favourite end-point/path miss fractions.

    Time integrals are left-endpoint sums over ``k = 0 .. K-1``; argmax ties
    go to the lexicographically first site.
    """
    if fields is None:
        fields = solve(env, params)
    elif fields.backward is None:
        raise ValueError("fields need the backward sweep")
    I, b, xs = _collision_and_miss(endpoint_law(fields))
    J, bbar, ys = _collision_and_miss(marginal_T(fields))
    box = fields.box
    return OverlapReport(I=I, J=J, a=1.0 - I, b=b, abar=1.0 - J, bbar=bbar,
                         x_star=box.sites[xs], y_star=box.sites[ys],
                         logZ=fields.logZ, leak=fields.leak)


@dataclass
class DecayProfile:
    radius: np.ndarray
    shell_max: np.ndarray
    shell_mass: np.ndarray


def decay_profile(fields: SolverFields, k: int | None = None,
                  mass_tol: float = 1e-8) -> DecayProfile:
    """Per sup-norm shell maximum and total mass of the end-point law.

    Warns when the outermost shell carries more than ``mass_tol``.
    """
    law = endpoint_law(fields, fields.K if k is None else k)
    rad = fields.box.radius()
    radii = np.arange(fields.box.R + 1)
    shell_max = np.array([law[rad == r].max() for r in radii])
    shell_mass = np.bincount(rad, weights=law, minlength=radii.size)
    if shell_mass[-1] > mass_tol:
        warnings.warn(f"outer shell holds mass {shell_mass[-1]:.2e}; enlarge R",
                      RuntimeWarning, stacklevel=2)
    return DecayProfile(radii, shell_max, shell_mass)
