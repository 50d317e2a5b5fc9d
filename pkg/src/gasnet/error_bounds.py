"""Certified gaps between nonlinear and linearized trajectories.

All norms are maximum norms.  With ``a = 4 |alpha_bar| |rho_bar|`` and
``b = 2 |beta_bar| |phi_bar|`` the uniform bound reads

    |e(t)| <= (a k^2 / (1-k)^2 + b k^2 / (1-k)) int_0^t |exp(A tau)| dtau

for deviations within a fraction k of the nominal state, and the
time-varying bound replaces k^2 by gamma(tau)^2 under the integral with
``c = a / (1-g_max)^2 + b / (1-g_max)`` in front.  Relative versions divide
by ``|(rho_bar, phi_bar)|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .linearize import LinearModel
from .state import Trajectory

DEFAULT_STEPS = 2000
ONE_HOUR = 3600.0


def _dense(A) -> np.ndarray:
    return A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)


def _inf_norm(M: np.ndarray) -> float:
    return float(np.abs(M).sum(axis=1).max())


def _grid(t_end: float, n: int, levels: int) -> np.ndarray:
    """Uniform grid with ``n`` steps, or ``levels`` doubling segments of ``n`` steps each."""
    if levels <= 1:
        return np.linspace(0.0, t_end, n + 1)
    edges = t_end * 2.0 ** np.arange(-(levels - 1), 1)
    pieces = [np.linspace(0.0, edges[0], n + 1)]
    for lo, hi in zip(edges[:-1], edges[1:]):
        pieces.append(np.linspace(lo, hi, n + 1)[1:])
    return np.concatenate(pieces)


def expm_norm_samples(A, times) -> np.ndarray:
    """``|exp(A tau)|_inf`` on an increasing grid starting at 0.

    Steps share one matrix exponential per distinct step length, so uniform
    and piecewise-uniform grids cost one multiplication per sample.
    """
    A = _dense(A)
    times = np.asarray(times, dtype=float)
    E = np.eye(A.shape[0])
    out = np.empty(times.size)
    out[0] = 1.0
    cache: dict[float, np.ndarray] = {}
    for k in range(1, times.size):
        h = float(times[k] - times[k - 1])
        key = round(h, 12)
        P = cache.get(key)
        if P is None:
            P = cache[key] = sla.expm(A * h)
        with np.errstate(over="ignore", invalid="ignore"):
            E = E @ P
            out[k] = _inf_norm(E)
        if not np.isfinite(out[k]):
            raise OverflowError("matrix exponential overflowed; is the matrix unstable?")
    return out


class QuadratureCurve(NamedTuple):
    times: np.ndarray
    cumulative: np.ndarray
    rel_change: float  # last Richardson comparison


def expm_norm_curve(A, t_end: float, quad_step: float | None = None,
                    weight: Callable[[np.ndarray], np.ndarray] | None = None,
                    rtol: float = 1e-4, max_refine: int = 6, levels: int = 1) -> QuadratureCurve:
    """Running integral of ``weight(tau) |exp(A tau)|`` over [0, t_end].

    The composite trapezoid rule starts from ``t_end / 2000`` (or
    ``quad_step``) and halves the step until two successive results agree
    to ``rtol`` relative at ``t_end``.  ``levels > 1`` grades the grid into
    segments of doubling length, which suits long horizons where only the
    start needs fine resolution.
    """
    if not t_end > 0:
        raise ValueError("t must be positive")
    if quad_step is not None and not quad_step > 0:
        raise ValueError("quad_step must be positive")
    if levels > 1:
        n = max(50, DEFAULT_STEPS // levels)
    else:
        n = DEFAULT_STEPS if quad_step is None else max(1, int(math.ceil(t_end / quad_step - 1e-9)))

    def run(n):
        tau = _grid(t_end, n, levels)
        y = expm_norm_samples(A, tau)
        if weight is not None:
            y = y * weight(tau)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(tau) * (y[1:] + y[:-1]))])
        return tau, cum

    tau, cum = run(n)
    rel = np.inf
    for _ in range(max_refine):
        tau2, cum2 = run(2 * n)
        denom = max(abs(cum2[-1]), 1e-300)
        rel = abs(cum2[-1] - cum[-1]) / denom
        tau, cum, n = tau2, cum2, 2 * n
        if rel <= rtol or cum2[-1] == 0.0:
            break
    return QuadratureCurve(tau, cum, float(rel))


def expm_norm_integral(A, t: float, quad_step: float | None = None, rtol: float = 1e-4,
                       levels: int = 1) -> float:
    """``int_0^t |exp(A tau)|_inf dtau`` by composite trapezoid."""
    if t == 0:
        return 0.0
    return float(expm_norm_curve(A, t, quad_step, rtol=rtol, levels=levels).cumulative[-1])


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundParams:
    a: float
    b: float
    state_norm: float

    @property
    def a0(self) -> float:
        return self.a / self.state_norm

    @property
    def b0(self) -> float:
        return self.b / self.state_norm

    def c(self, gamma_max: float) -> float:
        _check_fraction(gamma_max, "gamma_max")
        return self.a / (1 - gamma_max) ** 2 + self.b / (1 - gamma_max)

    def c0(self, gamma_max: float) -> float:
        return self.c(gamma_max) / self.state_norm

    def uniform_factor(self, kappa: float, relative: bool = True) -> float:
        _check_fraction(kappa, "kappa")
        a, b = (self.a0, self.b0) if relative else (self.a, self.b)
        return a * kappa**2 / (1 - kappa) ** 2 + b * kappa**2 / (1 - kappa)


def _check_fraction(x: float, name: str):
    if not 0 <= x < 1:
        raise ValueError(f"{name} must lie in [0, 1)")


def _require_inertial(model: LinearModel):
    if model.delta != 1:
        raise ValueError("error bounds hold for the inertial model (delta = 1) only")


def bound_params(model: LinearModel) -> BoundParams:
    nom = model.nominal
    rho_n = float(np.max(np.abs(nom.rho)))
    phi_n = float(np.max(np.abs(nom.phi))) if nom.phi.size else 0.0
    a = 4 * float(np.max(np.abs(model.alpha))) * rho_n
    b = 2 * float(np.max(np.abs(model.beta))) * phi_n
    return BoundParams(a, b, max(rho_n, phi_n))


def uniform_bound(model: LinearModel, kappa: float, t, relative: bool = True,
                  quad_step: float | None = None, levels: int = 1):
    """Uniform bound at time(s) ``t``; scalar in, scalar out."""
    _require_inertial(model)
    bp = bound_params(model)
    factor = bp.uniform_factor(kappa, relative)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t_arr < 0):
        raise ValueError("t must be nonnegative")
    t_end = float(t_arr.max())
    if factor == 0.0 or t_end == 0.0:
        out = np.zeros_like(t_arr)
    else:
        curve = expm_norm_curve(model.A, t_end, quad_step, levels=levels)
        out = factor * np.interp(t_arr, curve.times, curve.cumulative)
    return float(out[0]) if np.ndim(t) == 0 else out


def sinusoidal_gamma(kappa: float, period: float = ONE_HOUR):
    """``gamma(t) = kappa |sin(2 pi t / period)|`` and its maximum."""
    _check_fraction(kappa, "kappa")
    return (lambda tau: kappa * np.abs(np.sin(2 * np.pi * np.asarray(tau) / period))), kappa


def time_varying_bound(model: LinearModel, gamma, gamma_max: float, t,
                       relative: bool = True, quad_step: float | None = None):
    """Time-varying bound ``c int_0^t gamma^2 |exp(A tau)| dtau`` at time(s) ``t``.

    ``gamma`` is a vectorized callable bounded by ``gamma_max < 1``.
    """
    _require_inertial(model)
    bp = bound_params(model)
    c = bp.c0(gamma_max) if relative else bp.c(gamma_max)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    t_end = float(t_arr.max())
    if t_end == 0.0 or c == 0.0:
        out = np.zeros_like(t_arr)
    else:
        probe = np.asarray(gamma(np.linspace(0, t_end, 257)), dtype=float)
        if np.any(probe < -1e-15) or np.any(probe > gamma_max * (1 + 1e-12)):
            raise ValueError("gamma must stay within [0, gamma_max]")
        curve = expm_norm_curve(model.A, t_end, quad_step,
                                weight=lambda tau: np.asarray(gamma(tau), float) ** 2)
        out = c * np.interp(t_arr, curve.times, curve.cumulative)
    return float(out[0]) if np.ndim(t) == 0 else out


def first_crossing(times, values, level: float) -> float:
    """First time a nondecreasing sampled curve reaches ``level`` (linear interpolation).

    Returns ``inf`` when the level is never reached.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    idx = np.flatnonzero(values >= level)
    if idx.size == 0:
        return math.inf
    i = int(idx[0])
    if i == 0:
        return float(times[0])
    t0, t1, v0, v1 = times[i - 1], times[i], values[i - 1], values[i]
    return float(t0 + (level - v0) * (t1 - t0) / (v1 - v0))


# ---------------------------------------------------------------------------


class Gap(NamedTuple):
    rho: float
    phi: float
    mu: float


def _sym_rel(x1: np.ndarray, x2: np.ndarray) -> float:
    if x1.size == 0:
        return 0.0
    num = np.abs(x1 - x2).max(axis=1)
    den = np.abs(x1 + x2).max(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(num == 0, 0.0, 2 * num / den)
    return float(np.max(r) * 100.0)


def empirical_gap(traj_a: Trajectory, traj_b: Trajectory) -> Gap:
    """Symmetric maximum relative errors in percent for density, flux and ratios."""
    if traj_a.times.shape != traj_b.times.shape or not np.allclose(traj_a.times, traj_b.times):
        raise ValueError("trajectories must share the sampling grid")
    return Gap(_sym_rel(traj_a.rho, traj_b.rho), _sym_rel(traj_a.phi, traj_b.phi),
               _sym_rel(traj_a.mu, traj_b.mu))


def observed_kappa(traj: Trajectory, model: LinearModel) -> float:
    """Smallest fraction k with ``|x - x_bar| <= k |x_bar|`` componentwise on the trajectory."""
    nom = model.nominal
    ref = np.concatenate([nom.rho, nom.phi])
    dev = np.abs(traj.states - ref)
    scale = np.abs(ref)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(dev == 0, 0.0, dev / scale)
    return float(np.max(ratio))


class Certification(NamedTuple):
    hypothesis_met: bool
    kappa: float
    gap: np.ndarray  # absolute max-norm gap per sample
    bound: np.ndarray  # absolute bound per sample
    dominated: bool

    @property
    def status(self) -> str:
        if not self.hypothesis_met:
            return "hypothesis not met"
        return "certified" if self.dominated else "bound violated"


def certify(model: LinearModel, traj_nonlinear: Trajectory, traj_linear: Trajectory,
            kappa_max: float = 0.2, quad_step: float | None = None) -> Certification:
    """Compare the measured gap with the absolute uniform bound at every sample.

    The deviation fraction is measured on the nonlinear trajectory; above
    ``kappa_max`` the comparison is reported as not applicable.
    """
    _require_inertial(model)
    kappa = observed_kappa(traj_nonlinear, model)
    gap = np.abs(traj_nonlinear.states - traj_linear.states).max(axis=1)
    t = traj_nonlinear.times - traj_nonlinear.times[0]
    if kappa > kappa_max or kappa >= 1:
        return Certification(False, kappa, gap, np.full_like(gap, np.nan), False)
    bound = np.asarray(uniform_bound(model, kappa, t, relative=False, quad_step=quad_step))
    return Certification(True, kappa, gap, bound, bool(np.all(gap <= bound + 1e-12)))


def bounds_csv(times, e_uniform, e_tv, gap=None) -> str:
    lines = ["t,E_U,E_T,empirical_gap"]
    gap = [math.nan] * len(times) if gap is None else gap
    for row in zip(times, e_uniform, e_tv, gap):
        lines.append(",".join(f"{v:.10g}" for v in row))
    return "\n".join(lines) + "\n"
