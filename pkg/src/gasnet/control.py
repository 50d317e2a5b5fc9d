"""Compressor scheduling by receding-horizon (MPC) and full-horizon (OC) optimization.

Both controllers minimize the compressor energy

    J(t_m) = sum_k c_k phi_k(t_m) (mu_k(t_m)^e - 1),    e = (gamma - 1) / gamma,

subject to box bounds on densities, fluxes and ratios and to the implicit
Euler constraint ``D x(t_m) = D x(t_{m-1}) + dt f(x(t_m), mu(t_m))`` with
``D = diag(I, delta I)``.  In linear mode f is the adaptive linear model and
J its tangent, so every subproblem is a linear program.  In nonlinear mode
states are always obtained from the exact implicit step and the ratios are
improved by sequential linear programming with a trust region.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import linprog

from .incidence import Topology
from .linearize import LinearModel, NominalPoint, build_model
from .network import Network, Scenario
from .simulate import ConvergenceError, NetworkDynamics, Policy, simulate, time_grid
from .state import Trajectory

log = logging.getLogger(__name__)

DEFAULT_EXPONENT = 0.2359
OPTIMAL, INFEASIBLE, MAX_ITER = "optimal", "infeasible", "max_iter"


# ---------------------------------------------------------------------------
# objectives


def stage_cost(phi_c, mu, exponent: float = DEFAULT_EXPONENT, c=1.0) -> float:
    """``sum_k c_k phi_k (mu_k^e - 1)`` over compressor edges."""
    phi_c = np.asarray(phi_c, dtype=float)
    mu = np.asarray(mu, dtype=float)
    return float(np.sum(np.asarray(c) * phi_c * (mu**exponent - 1.0)))


def linearized_cost_coefficients(phi_bar_c, mu_bar, exponent: float = DEFAULT_EXPONENT, c=1.0):
    """Coefficients ``(g_phi, g_mu)`` of the tangent objective ``g_phi . phi + g_mu . mu``."""
    mu_bar = np.asarray(mu_bar, dtype=float)
    c = np.broadcast_to(np.asarray(c, dtype=float), mu_bar.shape)
    g_phi = c * (mu_bar**exponent - 1.0)
    g_mu = c * exponent * np.asarray(phi_bar_c, dtype=float) * mu_bar ** (exponent - 1.0)
    return g_phi, g_mu


def linearized_stage_cost(phi_c, mu, mu_bar, phi_bar_c, exponent: float = DEFAULT_EXPONENT,
                          c=1.0) -> float:
    g_phi, g_mu = linearized_cost_coefficients(phi_bar_c, mu_bar, exponent, c)
    return float(g_phi @ np.asarray(phi_c, float) + g_mu @ np.asarray(mu, float))


# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ControlGrid:
    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", t)
        if t.size < 2 or t[0] != 0 or np.any(np.diff(t) <= 0):
            raise ValueError("control grid must start at 0 and increase")

    @classmethod
    def uniform(cls, horizon: float, dt: float) -> "ControlGrid":
        return cls(time_grid(horizon, dt))

    @property
    def steps(self) -> int:
        return self.times.size - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)


@dataclass(frozen=True)
class ControlSettings:
    """Options shared by the controllers.

    ``mass_flow_cost`` weights the objective by cross sections (mass flow
    instead of flux).  ``tie_break`` re-solves each LP for the smallest sum of
    ratios among optimal solutions.  ``lp_method`` is passed to HiGHS.
    """

    exponent: float = DEFAULT_EXPONENT
    mass_flow_cost: bool = False
    tie_break: bool = True
    lp_method: str = "highs"
    delta: int = 1
    max_iter: int = 50
    step_tol: float = 1e-8
    trust_region: float = 0.05
    feas_tol: float = 1e-7


@dataclass(eq=False)
class OptimizationResult:
    times: np.ndarray
    mu: np.ndarray  # (m_T + 1, C); row 0 is the initial ratio vector
    rho: np.ndarray
    phi: np.ndarray
    stage_costs: np.ndarray  # nonlinear J(t_m), m = 1..m_T
    model_costs: np.ndarray  # the objective the solver minimized, per step
    status: str
    wall_time: float
    message: str = ""
    failed_step: int | None = None
    lp_iterations: int = 0
    extras: dict = field(default_factory=dict)

    @property
    def objective(self) -> float:
        """Accumulated compressor energy of the returned trajectory."""
        return float(np.sum(self.stage_costs))

    @property
    def model_objective(self) -> float:
        return float(np.sum(self.model_costs))

    @property
    def policy(self) -> Policy:
        return Policy(self.times, self.mu)

    @property
    def trajectory(self) -> Trajectory:
        return Trajectory(self.times, self.rho, self.phi, self.mu)


class _Problem:
    """Index bookkeeping shared by all formulations."""

    def __init__(self, net: Network, scenario: Scenario, settings: ControlSettings):
        self.net, self.scenario, self.settings = net, scenario, settings
        self.topo = Topology.of(net)
        self.nw = self.topo.n_withdrawal
        self.ne = self.topo.n_edges
        self.n = self.nw + self.ne
        self.ce = self.topo.comp_edges
        self.C = self.ce.size
        self.phi_idx = self.nw + self.ce
        p = net.params
        self.x_lb = np.concatenate([np.full(self.nw, p.rho_min), np.full(self.ne, p.phi_min)])
        self.x_ub = np.concatenate([np.full(self.nw, p.rho_max), np.full(self.ne, p.phi_max)])
        self.mu_ub = np.asarray(net.max_ratios, dtype=float)
        c = np.array([cmp.efficiency for cmp in net.compressors], dtype=float)
        if settings.mass_flow_cost:
            c = c * self.topo.area[self.ce]
        self.c = c
        self.dvec = np.concatenate([np.ones(self.nw), np.full(self.ne, float(settings.delta))])
        self.dyn = NetworkDynamics(net, delta=settings.delta)

    def inputs(self, t):
        return self.scenario.supply_vector(self.net, t), self.scenario.withdrawal_vector(self.net, t)

    def energy(self, x, mu) -> float:
        return stage_cost(x[self.phi_idx], mu, self.settings.exponent, self.c)

    def violation(self, x) -> float:
        lo = np.where(np.isfinite(self.x_lb), self.x_lb - x, 0.0)
        hi = np.where(np.isfinite(self.x_ub), x - self.x_ub, 0.0)
        return float(max(0.0, lo.max(initial=0.0), hi.max(initial=0.0)))

    def initial(self):
        mu0 = self.scenario.ratio_vector(self.net)
        s, w = self.inputs(0.0)
        x0 = self.dyn.steady_vec(mu0, s, w)
        return x0, mu0, s, w

    def nominal(self, x, mu, s, w) -> NominalPoint:
        return NominalPoint(x[: self.nw], x[self.nw:], mu, s, w)


# ---------------------------------------------------------------------------
# linear programs


class _LPResult:
    def __init__(self, status, z=None, value=None, message="", nit=0):
        self.status, self.z, self.value, self.message, self.nit = status, z, value, message, nit


def _solve_lp(cost, A_eq, b_eq, bounds, settings: ControlSettings, A_ub=None, b_ub=None,
              tie_cost=None) -> _LPResult:
    opts = {"primal_feasibility_tolerance": settings.feas_tol,
            "dual_feasibility_tolerance": settings.feas_tol}
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds,
                  method=settings.lp_method, options=opts)
    if res.status == 2:
        return _LPResult(INFEASIBLE, message=res.message, nit=res.nit)
    if res.status == 1:
        return _LPResult(MAX_ITER, res.x, res.fun, res.message, res.nit)
    if res.status != 0:
        return _LPResult(INFEASIBLE, message=res.message, nit=res.nit)
    z, val, nit = res.x, res.fun, res.nit
    if settings.tie_break and tie_cost is not None:
        cap = val + 1e-7 * (1.0 + abs(val))
        row = sp.csr_matrix(np.asarray(cost, dtype=float)[None, :])
        A2 = row if A_ub is None else sp.vstack([A_ub, row]).tocsr()
        b2 = np.array([cap]) if b_ub is None else np.concatenate([b_ub, [cap]])
        res2 = linprog(tie_cost, A_ub=A2, b_ub=b2, A_eq=A_eq, b_eq=b_eq, bounds=bounds,
                       method=settings.lp_method, options=opts)
        if res2.status == 0:
            z = res2.x
            val = float(np.dot(cost, z))
            nit += res2.nit
    return _LPResult(OPTIMAL, z, val, res.message, nit)


def _bounds_list(lo, hi):
    return [(None if not np.isfinite(a) else a, None if not np.isfinite(b) else b)
            for a, b in zip(lo, hi)]


class _LinearStepper:
    """One linear-program step of the implicit Euler constraint."""

    def __init__(self, prob: _Problem):
        self.prob = prob

    def names(self):
        p = self.prob
        return ([f"rho[node {i}]" for i in p.net.withdrawal_ids]
                + [f"phi[edge {k}]" for k in (pp.id for pp in p.net.pipes)])

    def step(self, model: LinearModel, x_prev, dt, s, w, mu_bar, phi_bar_c):
        p, st = self.prob, self.prob.settings
        B, d = model.control_form(s, w)
        S = (sp.diags(p.dvec) - dt * model.A).tocsr()
        A_eq = sp.hstack([S, -dt * B]).tocsr()
        b_eq = p.dvec * x_prev + dt * d
        g_phi, g_mu = linearized_cost_coefficients(phi_bar_c, mu_bar, st.exponent, p.c)
        cost = np.zeros(p.n + p.C)
        cost[p.phi_idx] += g_phi
        cost[p.n:] += g_mu
        lo = np.concatenate([p.x_lb, np.ones(p.C)])
        hi = np.concatenate([p.x_ub, p.mu_ub])
        tie = np.concatenate([np.zeros(p.n), np.ones(p.C)])
        res = _solve_lp(cost, A_eq, b_eq, _bounds_list(lo, hi), st, tie_cost=tie)
        if res.status == INFEASIBLE:
            res.message = f"{res.message}; {self._certificate(A_eq, b_eq)}"
        return res

    def _certificate(self, A_eq, b_eq) -> str:
        """Phase one: minimize total state-bound violation with ratios kept feasible."""
        p, st = self.prob, self.prob.settings
        n, C = p.n, p.C
        # variables: z (n + C), u >= 0, v >= 0 with lb - u <= x <= ub + v
        fin_lo = np.flatnonzero(np.isfinite(p.x_lb))
        fin_hi = np.flatnonzero(np.isfinite(p.x_ub))
        nl, nh = fin_lo.size, fin_hi.size
        A_eq2 = sp.hstack([A_eq, sp.csr_matrix((A_eq.shape[0], nl + nh))]).tocsr()
        rows_lo = sp.hstack([-sp.eye(n + C, format="csr")[fin_lo], -sp.eye(nl, nl + nh, format="csr")])
        rows_hi = sp.hstack([sp.eye(n + C, format="csr")[fin_hi], -sp.eye(nh, nl + nh, k=nl, format="csr")])
        A_ub = sp.vstack([rows_lo, rows_hi]).tocsr()
        b_ub = np.concatenate([-p.x_lb[fin_lo], p.x_ub[fin_hi]])
        cost = np.concatenate([np.zeros(n + C), np.ones(nl + nh)])
        bounds = [(None, None)] * n + list(zip(np.ones(C), p.mu_ub)) + [(0, None)] * (nl + nh)
        res = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq2, b_eq=b_eq, bounds=bounds,
                      method=st.lp_method)
        if res.status != 0:
            return "no certificate available"
        names = self.names()
        viol = res.x[n + C:]
        found = []
        for j in np.argsort(-viol)[:5]:
            if viol[j] <= 1e-9:
                break
            if j < nl:
                found.append(f"lower bound of {names[fin_lo[j]]} short by {viol[j]:.4g}")
            else:
                found.append(f"upper bound of {names[fin_hi[j - nl]]} exceeded by {viol[j]:.4g}")
        return "violated: " + "; ".join(found) if found else "no certificate available"


# ---------------------------------------------------------------------------
# nonlinear steps by sequential linear programming


class _NonlinearStepper:
    def __init__(self, prob: _Problem):
        self.prob = prob

    def _solve_state(self, x_prev, dt, mu, s, w, guess):
        return self.prob.dyn.step_vec(x_prev, dt, mu, s, w, tol=1e-10, x_guess=guess)

    def _sensitivity(self, x, dt, mu, s, w):
        p = self.prob
        S = (sp.diags(p.dvec) - dt * p.dyn.jac_x(x, mu, s, w)).tocsc()
        Jmu = p.dyn.jac_mu(x, mu, s, w).toarray()
        return spla.splu(S).solve(dt * Jmu)

    def step(self, x_prev, dt, s, w, mu_start):
        p, st = self.prob, self.prob.settings
        lo_mask = np.isfinite(p.x_lb)
        hi_mask = np.isfinite(p.x_ub)
        mu = np.clip(mu_start, 1.0, p.mu_ub)
        try:
            x = self._solve_state(x_prev, dt, mu, s, w, None)
        except ConvergenceError as exc:
            return INFEASIBLE, None, None, f"implicit step failed: {exc}", 0
        scale = 1.0 + float(np.max(np.abs(p.c))) * (1.0 + float(np.max(np.abs(x[p.phi_idx]))))
        penalty = 1e3 * scale
        radius = st.trust_region
        nit = 0

        def merit(x, mu):
            v = np.sum(np.maximum(p.x_lb[lo_mask] - x[lo_mask], 0)) + np.sum(
                np.maximum(x[hi_mask] - p.x_ub[hi_mask], 0))
            return p.energy(x, mu) + penalty * v

        m_cur = merit(x, mu)
        status = MAX_ITER
        for it in range(st.max_iter):
            G = self._sensitivity(x, dt, mu, s, w)
            e = st.exponent
            grad = (p.c * e * x[p.phi_idx] * mu ** (e - 1.0)
                    + (p.c * (mu**e - 1.0)) @ G[p.phi_idx])
            dmu, pred, k = self._lp(x, G, grad, mu, radius, lo_mask, hi_mask, penalty)
            nit += k
            if dmu is None:
                return INFEASIBLE, x, mu, "trust-region subproblem failed", nit
            step_norm = float(np.max(np.abs(dmu))) if dmu.size else 0.0
            if step_norm <= st.step_tol or pred <= 1e-12 * (1 + abs(m_cur)):
                status = OPTIMAL
                break
            mu_new = np.clip(mu + dmu, 1.0, p.mu_ub)
            try:
                x_new = self._solve_state(x_prev, dt, mu_new, s, w, x)
                m_new = merit(x_new, mu_new)
            except ConvergenceError:
                m_new = np.inf
            ratio = (m_cur - m_new) / pred
            if ratio >= 0.1:
                x, mu, m_cur = x_new, mu_new, m_new
                if ratio > 0.75 and step_norm >= 0.99 * radius:
                    radius = min(2 * radius, 1.0)
            else:
                radius = 0.25 * step_norm
                if radius < st.step_tol:
                    status = OPTIMAL
                    break
        if p.violation(x) > max(st.feas_tol, 1e-9 * float(np.max(np.abs(x)))):
            return INFEASIBLE, x, mu, f"bounds violated by {p.violation(x):.3g}", nit
        return status, x, mu, "", nit

    def _lp(self, x, G, grad, mu, radius, lo_mask, hi_mask, penalty):
        """Minimize the linear merit model over the trust region."""
        p, st = self.prob, self.prob.settings
        C = p.C
        il, ih = np.flatnonzero(lo_mask), np.flatnonzero(hi_mask)
        nl, nh = il.size, ih.size
        # variables: dmu (C), u (nl), v (nh)
        # x_lb - u <= x + G dmu   ->  -G dmu - u <= x - x_lb
        # x + G dmu <= x_ub + v   ->   G dmu - v <= x_ub - x
        A_ub = np.zeros((nl + nh, C + nl + nh))
        A_ub[:nl, :C] = -G[il]
        A_ub[:nl, C:C + nl] = -np.eye(nl)
        A_ub[nl:, :C] = G[ih]
        A_ub[nl:, C + nl:] = -np.eye(nh)
        b_ub = np.concatenate([x[il] - p.x_lb[il], p.x_ub[ih] - x[ih]])
        cost = np.concatenate([grad, np.full(nl + nh, penalty)])
        lo = np.maximum(1.0 - mu, -radius)
        hi = np.minimum(p.mu_ub - mu, radius)
        bounds = list(zip(lo, hi)) + [(0, None)] * (nl + nh)
        res = linprog(cost, A_ub=sp.csr_matrix(A_ub), b_ub=b_ub, bounds=bounds,
                      method=st.lp_method)
        if res.status != 0:
            return None, 0.0, res.nit
        # predicted reduction of the merit function
        v0 = np.sum(np.maximum(-b_ub[:nl], 0)) + np.sum(np.maximum(-b_ub[nl:], 0))
        pred = penalty * v0 - res.fun
        return res.x[:C], float(pred), res.nit


# ---------------------------------------------------------------------------
# drivers


def _finish(prob, times, xs, mus, costs, model_costs, status, t0, message="", failed=None,
            nit=0, extras=None) -> OptimizationResult:
    X = np.array(xs)
    k = len(xs)
    return OptimizationResult(
        times=np.asarray(times[:k], dtype=float), mu=np.array(mus), rho=X[:, :prob.nw],
        phi=X[:, prob.nw:], stage_costs=np.array(costs), model_costs=np.array(model_costs),
        status=status, wall_time=time.perf_counter() - t0, message=message,
        failed_step=failed, lp_iterations=nit, extras=extras or {})


def mpc_step(prob_or_net, scenario=None, *, x_prev, mu_prev, dt, s, w, mode="linear",
             model: LinearModel | None = None, settings: ControlSettings | None = None):
    """Solve one receding-horizon segment.

    Returns ``(status, x, mu, model_cost, message, lp_iterations)``.  In linear mode
    ``model`` supplies the dynamics; when omitted it is built at
    ``(x_prev, mu_prev, s, w)``.
    """
    prob = prob_or_net if isinstance(prob_or_net, _Problem) else _Problem(
        prob_or_net, scenario, settings or ControlSettings())
    st = prob.settings
    if mode == "linear":
        if model is None:
            model = build_model(prob.topo, prob.nominal(x_prev, mu_prev, s, w), st.delta)
        phi_bar_c = model.nominal.phi[prob.ce]
        res = _LinearStepper(prob).step(model, x_prev, dt, s, w, model.nominal.mu, phi_bar_c)
        if res.status == INFEASIBLE:
            return INFEASIBLE, None, None, math.nan, res.message, res.nit
        z = res.z
        return res.status, z[:prob.n], z[prob.n:], res.value, "", res.nit
    if mode == "nonlinear":
        status, x, mu, msg, nit = _NonlinearStepper(prob).step(x_prev, dt, s, w, mu_prev)
        cost = prob.energy(x, mu) if x is not None else math.nan
        return status, x, mu, cost, msg, nit
    raise ValueError("mode must be 'linear' or 'nonlinear'")


def run_mpc(net: Network, scenario: Scenario, grid: ControlGrid, mode: str = "linear",
            relinearize: bool = True, settings: ControlSettings | None = None) -> OptimizationResult:
    """Receding single-segment optimization over the whole grid."""
    settings = settings or ControlSettings()
    prob = _Problem(net, scenario, settings)
    t0 = time.perf_counter()
    x, mu, s, w = prob.initial()
    xs, mus, costs, mcosts = [x], [mu], [], []
    frozen = None
    if mode == "linear" and not relinearize:
        frozen = build_model(prob.topo, prob.nominal(x, mu, s, w), settings.delta)
    nit = 0
    for m in range(1, grid.times.size):
        dt = grid.times[m] - grid.times[m - 1]
        s_m, w_m = prob.inputs(grid.times[m])
        model = frozen
        if mode == "linear" and model is None:
            model = build_model(prob.topo, prob.nominal(x, mu, s, w), settings.delta)
        status, x_new, mu_new, mc, msg, k = mpc_step(
            prob, x_prev=x, mu_prev=mu, dt=dt, s=s_m, w=w_m, mode=mode, model=model)
        nit += k
        if status == INFEASIBLE:
            log.info("MPC step %d infeasible: %s", m, msg)
            return _finish(prob, grid.times, xs, mus, costs, mcosts, INFEASIBLE, t0,
                           f"step {m}: {msg}", m, nit)
        x, mu, s, w = x_new, mu_new, s_m, w_m
        xs.append(x)
        mus.append(mu)
        costs.append(prob.energy(x, mu))
        mcosts.append(mc)
    return _finish(prob, grid.times, xs, mus, costs, mcosts, OPTIMAL, t0, nit=nit)


def run_oc(net: Network, scenario: Scenario, grid: ControlGrid, mode: str = "linear",
           settings: ControlSettings | None = None,
           initial_policy: np.ndarray | None = None) -> OptimizationResult:
    """One optimization over all segments with chained implicit Euler constraints.

    Linear mode uses a single model linearized about the initial steady
    state.  Nonlinear mode starts from ``initial_policy`` (rows 1..m_T) or
    from the initial ratios held constant.
    """
    settings = settings or ControlSettings()
    prob = _Problem(net, scenario, settings)
    if mode == "linear":
        return _linear_oc(prob, grid)
    if mode == "nonlinear":
        return _nonlinear_oc(prob, grid, initial_policy)
    raise ValueError("mode must be 'linear' or 'nonlinear'")


def _linear_oc(prob: _Problem, grid: ControlGrid) -> OptimizationResult:
    st = prob.settings
    t0 = time.perf_counter()
    x0, mu0, s0, w0 = prob.initial()
    model = build_model(prob.topo, prob.nominal(x0, mu0, s0, w0), st.delta)
    mT, n, C = grid.steps, prob.n, prob.C
    nv = n + C
    g_phi, g_mu = linearized_cost_coefficients(model.nominal.phi[prob.ce], mu0, st.exponent, prob.c)
    blocks, rhs = [], []
    Dm = sp.diags(prob.dvec)
    for m in range(1, mT + 1):
        dt = grid.times[m] - grid.times[m - 1]
        s_m, w_m = prob.inputs(grid.times[m])
        B, d = model.control_form(s_m, w_m)
        S = (Dm - dt * model.A).tocsr()
        row = [None] * mT
        row[m - 1] = sp.hstack([S, -dt * B])
        if m > 1:
            row[m - 2] = sp.hstack([-Dm, sp.csr_matrix((n, C))])
        blocks.append(row)
        rhs.append(dt * d + (prob.dvec * x0 if m == 1 else 0.0))
    A_eq = sp.bmat(blocks, format="csr")
    b_eq = np.concatenate(rhs)
    cost1 = np.zeros(nv)
    cost1[prob.phi_idx] = g_phi
    cost1[n:] = g_mu
    cost = np.tile(cost1, mT)
    tie = np.tile(np.concatenate([np.zeros(n), np.ones(C)]), mT)
    lo = np.tile(np.concatenate([prob.x_lb, np.ones(C)]), mT)
    hi = np.tile(np.concatenate([prob.x_ub, prob.mu_ub]), mT)
    res = _solve_lp(cost, A_eq, b_eq, _bounds_list(lo, hi), st, tie_cost=tie)
    if res.status == INFEASIBLE or res.z is None:
        return _finish(prob, grid.times, [x0], [mu0], [], [], INFEASIBLE, t0, res.message,
                       None, res.nit)
    Z = res.z.reshape(mT, nv)
    xs = [x0] + [Z[m, :n] for m in range(mT)]
    mus = [mu0] + [Z[m, n:] for m in range(mT)]
    costs = [prob.energy(xs[m], mus[m]) for m in range(1, mT + 1)]
    mcosts = [float(cost1 @ Z[m]) for m in range(mT)]
    return _finish(prob, grid.times, xs, mus, costs, mcosts, res.status, t0, res.message,
                   nit=res.nit)


def _nonlinear_oc(prob: _Problem, grid: ControlGrid, initial_policy) -> OptimizationResult:
    st = prob.settings
    t0 = time.perf_counter()
    x0, mu0, _, _ = prob.initial()
    mT, n, C = grid.steps, prob.n, prob.C
    dts = grid.dt
    inputs = [prob.inputs(t) for t in grid.times[1:]]
    U = (np.tile(mu0, (mT, 1)) if initial_policy is None
         else np.asarray(initial_policy, dtype=float).reshape(mT, C).copy())
    U = np.clip(U, 1.0, prob.mu_ub)
    stepper = _NonlinearStepper(prob)
    lo_mask, hi_mask = np.isfinite(prob.x_lb), np.isfinite(prob.x_ub)

    def rollout(U, guesses=None):
        xs, x = [], x0
        for m in range(mT):
            s, w = inputs[m]
            x = stepper._solve_state(x, dts[m], U[m], s, w,
                                     None if guesses is None else guesses[m])
            xs.append(x)
        return np.array(xs)

    def merit(X, U, penalty):
        v = (np.maximum(prob.x_lb[lo_mask] - X[:, lo_mask], 0).sum()
             + np.maximum(X[:, hi_mask] - prob.x_ub[hi_mask], 0).sum())
        e = sum(prob.energy(X[m], U[m]) for m in range(mT))
        return e + penalty * v, v

    try:
        X = rollout(U)
    except ConvergenceError as exc:
        return _finish(prob, grid.times, [x0], [mu0], [], [], INFEASIBLE, t0, str(exc))
    scale = 1.0 + float(np.max(np.abs(prob.c))) * (1.0 + float(np.max(np.abs(X[:, prob.phi_idx]))))
    penalty = 1e3 * scale
    radius = st.trust_region
    m_cur, _ = merit(X, U, penalty)
    status, nit = MAX_ITER, 0
    il, ih = np.flatnonzero(lo_mask), np.flatnonzero(hi_mask)
    nl, nh = il.size, ih.size
    e = st.exponent
    for it in range(st.max_iter):
        # sensitivities dX_m / dU_j, j <= m, by forward recursion
        sens = np.zeros((mT, n, mT * C))
        prev = np.zeros((n, mT * C))
        grad = np.zeros(mT * C)
        for m in range(mT):
            s, w = inputs[m]
            x = X[m]
            S = spla.splu((sp.diags(prob.dvec) - dts[m] * prob.dyn.jac_x(x, U[m], s, w)).tocsc())
            rhs = prob.dvec[:, None] * prev
            rhs[:, m * C:(m + 1) * C] += dts[m] * prob.dyn.jac_mu(x, U[m], s, w).toarray()
            prev = S.solve(rhs)
            sens[m] = prev
            grad[m * C:(m + 1) * C] += prob.c * e * x[prob.phi_idx] * U[m] ** (e - 1.0)
            grad += (prob.c * (U[m] ** e - 1.0)) @ prev[prob.phi_idx]
        nvar = mT * C
        Gl = sens[:, il, :].reshape(mT * nl, nvar)
        Gh = sens[:, ih, :].reshape(mT * nh, nvar)
        ns = mT * (nl + nh)
        A_ub = sp.bmat([[sp.csr_matrix(-Gl), -sp.eye(mT * nl, ns)],
                        [sp.csr_matrix(Gh), -sp.eye(mT * nh, ns, k=mT * nl)]], format="csr")
        b_ub = np.concatenate([(X[:, il] - prob.x_lb[il]).ravel(),
                               (prob.x_ub[ih] - X[:, ih]).ravel()])
        cost = np.concatenate([grad, np.full(ns, penalty)])
        flatU = U.ravel()
        lo = np.maximum(1.0 - flatU, -radius)
        hi = np.minimum(np.tile(prob.mu_ub, mT) - flatU, radius)
        res = linprog(cost, A_ub=A_ub, b_ub=b_ub, bounds=list(zip(lo, hi)) + [(0, None)] * ns,
                      method=st.lp_method)
        nit += res.nit
        if res.status != 0:
            status = INFEASIBLE
            break
        v0 = np.maximum(-b_ub, 0).sum()
        pred = penalty * v0 - res.fun
        d = res.x[:nvar]
        step_norm = float(np.max(np.abs(d)))
        if step_norm <= st.step_tol or pred <= 1e-12 * (1 + abs(m_cur)):
            status = OPTIMAL
            break
        U_new = np.clip(U + d.reshape(mT, C), 1.0, prob.mu_ub)
        try:
            X_new = rollout(U_new, X)
            m_new, _ = merit(X_new, U_new, penalty)
        except ConvergenceError:
            m_new = np.inf
        ratio = (m_cur - m_new) / pred
        if ratio >= 0.1:
            X, U, m_cur = X_new, U_new, m_new
            if ratio > 0.75 and step_norm >= 0.99 * radius:
                radius = min(2 * radius, 1.0)
        else:
            radius = 0.25 * step_norm
            if radius < st.step_tol:
                status = OPTIMAL
                break
    viol = max(prob.violation(x) for x in X)
    if status != INFEASIBLE and viol > max(st.feas_tol, 1e-9 * float(np.max(np.abs(X)))):
        status = INFEASIBLE
    xs = [x0] + list(X)
    mus = [mu0] + list(U)
    costs = [prob.energy(X[m], U[m]) for m in range(mT)]
    msg = "" if status == OPTIMAL else f"max bound violation {viol:.3g}"
    return _finish(prob, grid.times, xs, mus, costs, list(costs), status, t0, msg, nit=nit)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AuditReport:
    max_violation: float  # as a fraction of the bound range
    max_state_gap: float  # max-norm gap between returned and re-simulated states
    passed: bool


def audit(net: Network, scenario: Scenario, result: OptimizationResult, dt_sim: float | None = None,
          tolerance: float = 0.02) -> AuditReport:
    """Re-simulate the returned policy and check bounds with a range-relative slack."""
    dyn = NetworkDynamics(net)
    times = result.times if dt_sim is None else time_grid(result.times[-1], dt_sim)
    x0 = np.concatenate([result.rho[0], result.phi[0]])
    sim = simulate(dyn, scenario, result.policy, x0=x0, times=times)
    p = net.params
    rng_rho = (p.rho_max - p.rho_min) if np.isfinite(p.rho_max - p.rho_min) else max(abs(p.rho_min), 1.0)
    rng_phi = (p.phi_max - p.phi_min) if np.isfinite(p.phi_max - p.phi_min) else max(
        float(np.max(np.abs(sim.phi))), 1.0)
    v = max(
        float(np.max(np.maximum(p.rho_min - sim.rho, 0))) / rng_rho,
        float(np.max(np.maximum(sim.rho - p.rho_max, 0))) / rng_rho if np.isfinite(p.rho_max) else 0.0,
        float(np.max(np.maximum(p.phi_min - sim.phi, 0))) / rng_phi,
        float(np.max(np.maximum(sim.phi - p.phi_max, 0))) / rng_phi if np.isfinite(p.phi_max) else 0.0,
    )
    gap = math.nan
    if dt_sim is None:
        gap = float(np.max(np.abs(sim.states - np.hstack([result.rho, result.phi]))))
    return AuditReport(v, gap, v <= tolerance)
