"""Generalized-alpha time integration of ``M a + K u = f(t)``.

The integrator works on the constraint-reduced system ``T^T K T``,
``T^T M T`` (time-independent constraints). Each step enforces the balance
at the intermediate levels ``u_{n+1-af}``, ``a_{n+1-am}``, ``t_{n+1-af}``;
:class:`BalanceLevel` records those quantities so that effective external
actions (applied load plus reactions minus inertia) can be formed from a
consistent, balanced set.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import ParameterError
from .linsys import ConstraintSet, Factorization, build_transformation
from .mechanics import DOFS_PER_NODE, NodalActions


def alpha_coefficients(rho_inf: float) -> tuple[float, float, float, float]:
    """``(alpha_m, alpha_f, beta, gamma)`` of the Chung-Hulbert family."""
    if not 0.0 <= rho_inf <= 1.0:
        raise ParameterError(f"spectral radius must lie in [0, 1], got {rho_inf}")
    am = (2.0 * rho_inf - 1.0) / (rho_inf + 1.0)
    af = rho_inf / (rho_inf + 1.0)
    gamma = 0.5 - am + af
    beta = 0.25 * (1.0 - am + af) ** 2
    return am, af, beta, gamma


@dataclass(frozen=True)
class TimeIntegratorParams:
    rho_inf: float
    dt: float
    t_end: float

    def __post_init__(self):
        alpha_coefficients(self.rho_inf)
        if not self.dt > 0.0:
            raise ParameterError(f"time step must be positive, got {self.dt}")
        if self.t_end < 0.0:
            raise ParameterError("t_end must be non-negative")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass
class DynamicState:
    u: np.ndarray
    v: np.ndarray
    a: np.ndarray
    t: float


@dataclass
class BalanceLevel:
    """Quantities at which the step's balance holds (full dof vectors)."""

    t: float
    u: np.ndarray
    a: np.ndarray
    f: np.ndarray


class GeneralizedAlpha:
    def __init__(
        self,
        K,
        M,
        params: TimeIntegratorParams,
        load: Callable[[float], np.ndarray],
        constraints: ConstraintSet | None = None,
    ):
        self.K = sp.csr_matrix(K)
        self.M = sp.csr_matrix(M)
        n = self.K.shape[0]
        self.params = params
        self.load = load
        self.tr = build_transformation(constraints if constraints is not None else ConstraintSet(n))
        T = self.tr.T
        self.Kr = (T.T @ self.K @ T).tocsc()
        self.Mr = (T.T @ self.M @ T).tocsc()
        self._Kg = self.K @ self.tr.g
        self.am, self.af, self.beta, self.gamma = alpha_coefficients(params.rho_inf)
        dt = params.dt
        Keff = (1.0 - self.am) * self.Mr + (1.0 - self.af) * self.beta * dt * dt * self.Kr
        self._lu = Factorization(Keff, symmetric=True)
        self._mlu = None

    def _reduced_load(self, t: float) -> np.ndarray:
        return self.tr.T.T @ (np.asarray(self.load(t), dtype=float) - self._Kg)

    def _full(self, x_r: np.ndarray, with_offset: bool) -> np.ndarray:
        return self.tr.T @ x_r + (self.tr.g if with_offset else 0.0)

    def initial_state(self, u0=None, v0=None) -> DynamicState:
        """Initial acceleration from ``M a0 = f(0) - K u0``."""
        nr = self.Kr.shape[0]
        ur = np.zeros(nr) if u0 is None else self.tr.restrict(np.asarray(u0, dtype=float))
        vr = np.zeros(nr) if v0 is None else self.tr.restrict(np.asarray(v0, dtype=float))
        rhs = self._reduced_load(0.0) - self.Kr @ ur
        if not np.any(rhs):
            ar = np.zeros(nr)
        else:
            if self._mlu is None:
                self._mlu = Factorization(self.Mr, symmetric=True)
            ar = self._mlu.solve(rhs)
        self._r = (ur, vr, ar)
        return DynamicState(self._full(ur, True), self._full(vr, False), self._full(ar, False), 0.0)

    def step(self, state: DynamicState) -> tuple[DynamicState, BalanceLevel]:
        ur, vr, ar = self._r
        dt = self.params.dt
        am, af, beta, gamma = self.am, self.af, self.beta, self.gamma
        t_new = state.t + dt
        t_alpha = t_new - af * dt
        f_alpha_full = np.asarray(self.load(t_alpha), dtype=float)
        fr = self.tr.T.T @ (f_alpha_full - self._Kg)
        pred = ur + dt * vr + dt * dt * (0.5 - beta) * ar
        rhs = fr - am * (self.Mr @ ar) - self.Kr @ ((1.0 - af) * pred + af * ur)
        a_new = self._lu.solve(rhs, check=False)
        u_new = pred + dt * dt * beta * a_new
        v_new = vr + dt * ((1.0 - gamma) * ar + gamma * a_new)
        u_lev = (1.0 - af) * u_new + af * ur
        a_lev = (1.0 - am) * a_new + am * ar
        self._r = (u_new, v_new, a_new)
        new = DynamicState(self._full(u_new, True), self._full(v_new, False), self._full(a_new, False), t_new)
        lev = BalanceLevel(t_alpha, self._full(u_lev, True), self._full(a_lev, False), f_alpha_full)
        return new, lev

    def run(self, u0=None, v0=None, callback=None) -> DynamicState:
        state = self.initial_state(u0, v0)
        for _ in range(self.params.n_steps):
            state, lev = self.step(state)
            if callback is not None:
                callback(state, lev)
        return state


def step(state: DynamicState, integrator: GeneralizedAlpha) -> DynamicState:
    """One update; thin wrapper kept for symmetry with the static API."""
    return integrator.step(state)[0]


def effective_external_actions(x, K, M, level: BalanceLevel, n_particles: int | None = None) -> NodalActions:
    """D'Alembert actions ``F_applied + F_reaction - M a`` at the balance level.

    Reactions come from the full rows, ``r = K u + M a - f``, so the result is
    ``K u`` on every row and the action set is balanced.
    """
    f = level.f
    Ma = M @ level.a
    r = K @ level.u + Ma - f
    eff = f + r - Ma
    n = x.shape[0] if n_particles is None else n_particles
    q = eff[: DOFS_PER_NODE * n].reshape(-1, 3)
    return NodalActions(x=np.asarray(x, dtype=float).copy(), F=q[:, :2].copy(), Z=q[:, 2].copy())


def amplification_matrix(omega: float, dt: float, rho_inf: float) -> np.ndarray:
    """Free-vibration amplification matrix of ``(u, dt v, dt^2 a)`` for ``u'' + omega^2 u = 0``."""
    K = sp.csr_matrix([[omega * omega]])
    M = sp.csr_matrix([[1.0]])
    params = TimeIntegratorParams(rho_inf, dt, dt)
    A = np.zeros((3, 3))
    scale = np.array([1.0, dt, dt * dt])
    for k in range(3):
        integ = GeneralizedAlpha(K, M, params, lambda t: np.zeros(1))
        e = np.zeros(3)
        e[k] = 1.0
        integ._r = (np.array([e[0]]), np.array([e[1] / dt]), np.array([e[2] / (dt * dt)]))
        s0 = DynamicState(integ._r[0].copy(), integ._r[1].copy(), integ._r[2].copy(), 0.0)
        s1, _ = integ.step(s0)
        A[:, k] = np.array([s1.u[0], s1.v[0], s1.a[0]]) * scale
    return A


def spectral_radius(omega: float, dt: float, rho_inf: float) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(amplification_matrix(omega, dt, rho_inf)))))


def oscillator_displacement(dt: float, t_end: float, rho_inf: float, omega: float = 1.0, u0: float = 1.0) -> float:
    """Final displacement of the free oscillator ``u'' + omega^2 u = 0``, ``u(0) = u0``."""
    K = sp.csr_matrix([[omega * omega]])
    M = sp.csr_matrix([[1.0]])
    integ = GeneralizedAlpha(K, M, TimeIntegratorParams(rho_inf, dt, t_end), lambda t: np.zeros(1))
    return float(integ.run(u0=np.array([u0])).u[0])
