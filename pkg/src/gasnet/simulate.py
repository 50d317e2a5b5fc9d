"""Nonlinear lumped dynamics, steady states and implicit time stepping."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .incidence import Topology
from .linearize import (
    LinearModel,
    NonpositiveDensityError,
    friction,
    friction_jacobians,
    mu_sensitivity,
    state_matrix,
)
from .network import Network, Scenario
from .state import State, Trajectory

log = logging.getLogger(__name__)

MAX_NEWTON = 50


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class StepError(ConvergenceError):
    pass


class NetworkDynamics:
    """Right-hand side and Jacobians of the lumped network ODE.

    ``delta=0`` drops the flux time derivative, so the flux equations become
    algebraic constraints.
    """

    def __init__(self, net: Network, delta: int = 1):
        self.net = net
        self.topology = Topology.of(net)
        self.delta = int(delta)
        self.n_withdrawal = self.topology.n_withdrawal
        self.n_edges = self.topology.n_edges
        self.size = self.n_withdrawal + self.n_edges

    def split(self, x):
        return x[: self.n_withdrawal], x[self.n_withdrawal:]

    def rhs_vec(self, x, mu, s, w) -> np.ndarray:
        topo = self.topology
        rho, phi = self.split(x)
        drho = topo.mass_operator @ phi - np.asarray(w, dtype=float) / topo.volume
        dphi = (-topo.sound_speed**2 / topo.length * topo.pressure_term(rho, s, mu)
                - friction(phi, topo.outlet(rho), topo.friction_coeff))
        return np.concatenate([drho, dphi])

    def rhs(self, state: State, mu, s, w) -> State:
        return State.from_vector(self.rhs_vec(state.vector, mu, s, w), self.n_withdrawal)

    def jac_x(self, x, mu, s, w) -> sp.csr_matrix:
        rho, phi = self.split(x)
        alpha, beta = friction_jacobians(self.topology, rho, phi)
        return state_matrix(self.topology, alpha, beta, mu)

    def jac_mu(self, x, mu, s, w) -> sp.csr_matrix:
        rho, _ = self.split(x)
        return mu_sensitivity(self.topology, rho, np.asarray(s, dtype=float))

    def term_scale(self, x, mu, s, w) -> np.ndarray:
        """Sum of absolute term magnitudes per equation, for relative residuals."""
        topo = self.topology
        rho, phi = self.split(x)
        w = np.asarray(w, dtype=float)
        absflux = abs(topo.mass_operator) @ np.abs(phi) + np.abs(w) / topo.volume
        sig2_L = topo.sound_speed**2 / topo.length
        press = sig2_L * (np.abs(rho[topo.head]) + topo.edge_mu(mu) * np.abs(topo.tail_values(rho, np.asarray(s, float))))
        fr = np.abs(friction(phi, topo.outlet(rho), topo.friction_coeff))
        # floor each block so equations with vanishing terms (dead ends at
        # rest) are judged against the block's round-off level
        mom = press + fr
        absflux = absflux + 1e-12 * absflux.max(initial=0.0)
        mom = mom + 1e-12 * mom.max(initial=0.0)
        return np.concatenate([absflux, mom])

    # -- solvers ----------------------------------------------------------

    def _newton(self, residual, jacobian, x0, scale, tol, what):
        x = x0.copy()
        r = residual(x)
        rn = np.max(np.abs(r) / scale(x))
        for it in range(MAX_NEWTON):
            if rn <= tol:
                return x, rn, it
            J = jacobian(x).tocsc()
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("error", spla.MatrixRankWarning)
                    dx = spla.spsolve(J, -r)
            except (RuntimeError, spla.MatrixRankWarning) as exc:  # singular factor
                raise ConvergenceError(f"{what}: singular Jacobian", rn) from exc
            if not np.all(np.isfinite(dx)):
                raise ConvergenceError(f"{what}: singular Jacobian", rn)
            t = 1.0
            while True:
                xn = x + t * dx
                try:
                    rnew = residual(xn)
                    rnn = np.max(np.abs(rnew) / scale(xn))
                except NonpositiveDensityError:
                    rnn = np.inf
                if rnn < rn or t < 1e-6:
                    break
                t *= 0.5
            if not np.isfinite(rnn):
                raise ConvergenceError(f"{what}: iterate left the positive-density region", rn)
            x, r, rn = xn, rnew, rnn
        if rn <= tol:
            return x, rn, MAX_NEWTON
        raise ConvergenceError(f"{what}: no convergence after {MAX_NEWTON} iterations "
                               f"(scaled residual {rn:.3e})", rn)

    def step_vec(self, x, dt, mu, s, w, tol=1e-9, x_guess=None):
        """Backward Euler: solve ``D (x+ - x) = dt f(x+)`` with D = diag(1, delta)."""
        if not dt > 0:
            raise ValueError("dt must be positive")
        nw = self.n_withdrawal
        dvec = np.concatenate([np.ones(nw), np.full(self.n_edges, float(self.delta))])
        Dm = sp.diags(dvec)

        def residual(z):
            return dvec * (z - x) - dt * self.rhs_vec(z, mu, s, w)

        def jacobian(z):
            return Dm - dt * self.jac_x(z, mu, s, w)

        def scale(z):
            return dvec * (np.abs(z) + np.abs(x)) + dt * self.term_scale(z, mu, s, w) + 1e-300

        guess = x if x_guess is None else x_guess
        try:
            z, _, _ = self._newton(residual, jacobian, guess, scale, tol, "implicit step")
        except ConvergenceError as exc:
            raise StepError(f"{exc}; try a smaller time step", exc.residual) from exc
        return z

    def step_implicit(self, state: State, dt, mu, s, w, tol=1e-9) -> State:
        return State.from_vector(self.step_vec(state.vector, dt, mu, s, w, tol), self.n_withdrawal)

    def initial_guess(self, s, w) -> np.ndarray:
        topo = self.topology
        rho = np.full(self.n_withdrawal, float(np.mean(s)))
        # least-norm flux satisfying Q'X phi = w
        G = (topo.Q.T @ sp.diags(topo.area)).toarray()
        phi = np.linalg.lstsq(G, np.asarray(w, dtype=float), rcond=None)[0]
        return np.concatenate([rho, phi])

    def steady_vec(self, mu, s, w, tol=1e-10, x0=None) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        w = np.asarray(w, dtype=float)
        x_init = self.initial_guess(s, w) if x0 is None else np.asarray(x0, dtype=float)

        def residual(z):
            return self.rhs_vec(z, mu, s, w)

        def jacobian(z):
            return self.jac_x(z, mu, s, w)

        def scale(z):
            return self.term_scale(z, mu, s, w) + 1e-300

        try:
            x, _, _ = self._newton(residual, jacobian, x_init, scale, tol, "steady state")
        except ConvergenceError:
            log.debug("plain Newton failed; falling back to pseudo-transient continuation")
            x = self._pseudo_transient(x_init, mu, s, w, residual, scale, tol)
        if np.any(x[: self.n_withdrawal] <= 0):
            raise ConvergenceError("steady state has nonpositive density; infeasible inputs")
        return x

    def _pseudo_transient(self, x, mu, s, w, residual, scale, tol):
        stepper = NetworkDynamics(self.net, delta=1)
        dt = 10.0
        rn = np.inf
        for _ in range(400):
            try:
                xn = stepper.step_vec(x, dt, mu, s, w, tol=1e-10)
            except StepError:
                dt *= 0.25
                if dt < 1e-3:
                    break
                continue
            x = xn
            rn = np.max(np.abs(residual(x)) / scale(x))
            if rn < 1e-4:
                try:
                    x, rn, _ = self._newton(residual, lambda z: self.jac_x(z, mu, s, w),
                                            x, scale, tol, "steady state")
                    return x
                except ConvergenceError:
                    pass
            dt = min(dt * 2.0, 1e7)
        raise ConvergenceError(f"steady state: no convergence (scaled residual {rn:.3e})", rn)

    def steady_state(self, mu, s, w, tol=1e-10) -> State:
        return State.from_vector(self.steady_vec(mu, s, w, tol), self.n_withdrawal)


class LinearDynamics:
    """Adapter giving a :class:`LinearModel` the stepping interface."""

    def __init__(self, model: LinearModel, net: Network, delta: int | None = None):
        self.model = model
        self.net = net
        self.delta = model.delta if delta is None else int(delta)
        self.n_withdrawal = model.n_withdrawal
        self.size = model.size
        self.n_edges = self.size - self.n_withdrawal

    def rhs_vec(self, x, mu, s, w):
        return self.model.linear_rhs_vec(x, mu, s, w)

    def step_vec(self, x, dt, mu, s, w, tol=None, x_guess=None):
        B, d = self.model.control_form(s, w)
        dvec = np.concatenate([np.ones(self.n_withdrawal), np.full(self.n_edges, float(self.delta))])
        lhs = (sp.diags(dvec) - dt * self.model.A).tocsc()
        rhs = dvec * x + dt * (B @ np.asarray(mu, dtype=float) + d)
        return spla.spsolve(lhs, rhs)


# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Policy:
    """Piecewise-constant compressor schedule.

    ``ratios[m]`` applies on ``(times[m-1], times[m]]``; ``ratios[0]`` at t = 0.
    """

    times: np.ndarray
    ratios: np.ndarray

    @classmethod
    def constant(cls, mu, horizon: float) -> "Policy":
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        return cls(np.array([0.0, horizon]), np.vstack([mu, mu]))

    def __call__(self, t: float) -> np.ndarray:
        m = int(np.searchsorted(self.times, t - 1e-9 * max(1.0, abs(t)), side="left"))
        return np.asarray(self.ratios[min(m, len(self.ratios) - 1)], dtype=float)


def time_grid(horizon: float, dt: float) -> np.ndarray:
    n = max(1, int(np.ceil(horizon / dt - 1e-9)))
    t = np.arange(n + 1) * dt
    t[-1] = horizon
    return t


def simulate(dynamics, scenario: Scenario, policy: Policy, dt: float = 60.0,
             x0: np.ndarray | None = None, times: np.ndarray | None = None) -> Trajectory:
    """Integrate with backward Euler on multiples of ``dt``.

    Boundary values and ratios are sampled at the right end of each step.
    The initial state defaults to the steady state of the t = 0 inputs.
    """
    net = dynamics.net
    t = time_grid(scenario.horizon, dt) if times is None else np.asarray(times, float)
    mu0 = policy(t[0])
    if x0 is None:
        if not isinstance(dynamics, NetworkDynamics):
            raise ValueError("x0 required for linear dynamics")
        x0 = dynamics.steady_vec(mu0, scenario.supply_vector(net, t[0]),
                                 scenario.withdrawal_vector(net, t[0]))
    xs = [np.asarray(x0, dtype=float)]
    mus = [mu0]
    for m in range(1, len(t)):
        mu = policy(t[m])
        s = scenario.supply_vector(net, t[m])
        w = scenario.withdrawal_vector(net, t[m])
        xs.append(dynamics.step_vec(xs[-1], t[m] - t[m - 1], mu, s, w))
        mus.append(mu)
    X = np.array(xs)
    nw = dynamics.n_withdrawal
    return Trajectory(t, X[:, :nw], X[:, nw:], np.array(mus))

