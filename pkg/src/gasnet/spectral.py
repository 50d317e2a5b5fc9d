"""Spectra of state matrices, pipe transfer matrices and pole formulas.

The linearized single-pipe equations in the Laplace domain are

    s P + Phi_x = 0,    delta s Phi + sigma^2 P_x = alpha P - beta Phi,

so that ``d/dx [P, Phi] = A(s) [P, Phi]`` with
``A = [[alpha/sigma^2, -Z/sigma^2], [-s, 0]]`` and series impedance
``Z = delta s + beta``.  The transfer matrix G maps (P^0, Phi^l) to
(P^l, Phi^0).  ``impedance_sign=-1`` switches to ``Z = delta s - beta``,
whose poles lie in the right half plane; it exists for comparison only.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .incidence import Topology
from .linearize import NominalPoint, friction_jacobians

log = logging.getLogger(__name__)

CYC_PER_HR = 2 * np.pi / 3600.0  # rad/s per cyc/hr


class TraceIdentityError(AssertionError):
    pass


class PreconditionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# single-pipe transfer matrices


@dataclass(frozen=True)
class PipeFrequencyParams:
    """Physical pipe data plus nominal flow and model-variant switches.

    ``alpha_flag`` and ``delta_flag`` select the four model variants.  The
    density coefficient is the Jacobian ``lambda phi|phi| / (2 D rho^2)``
    unless ``alpha_form="ratio"``, which uses ``lambda phi|phi| / (2 D rho)``.
    """

    length: float
    diameter: float
    friction: float
    sound_speed: float
    rho_bar: float
    phi_bar: float
    alpha_flag: int = 1
    delta_flag: int = 1
    impedance_sign: int = 1
    alpha_form: str = "jacobian"

    def __post_init__(self):
        if not self.rho_bar > 0:
            raise ValueError("rho_bar must be positive")
        if self.alpha_flag not in (0, 1) or self.delta_flag not in (0, 1):
            raise ValueError("alpha_flag and delta_flag must be 0 or 1")
        if self.impedance_sign not in (1, -1):
            raise ValueError("impedance_sign must be +1 or -1")
        if self.alpha_form not in ("jacobian", "ratio"):
            raise ValueError("alpha_form must be 'jacobian' or 'ratio'")
        for name in ("length", "diameter", "friction", "sound_speed"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def beta(self) -> float:
        return self.friction * abs(self.phi_bar) / (self.diameter * self.rho_bar)

    @property
    def alpha(self) -> float:
        if not self.alpha_flag:
            return 0.0
        num = self.friction * self.phi_bar * abs(self.phi_bar) / (2 * self.diameter)
        return num / (self.rho_bar**2 if self.alpha_form == "jacobian" else self.rho_bar)

    def impedance(self, s):
        return self.delta_flag * s + self.impedance_sign * self.beta

    def variant(self, alpha_flag: int, delta_flag: int) -> "PipeFrequencyParams":
        return replace(self, alpha_flag=alpha_flag, delta_flag=delta_flag)


VARIANTS = ((1, 1), (0, 1), (1, 0), (0, 0))  # (alpha_flag, delta_flag)


def _sech_tanh(x):
    """``sech x`` and ``tanh x`` for Re x >= 0 without overflow."""
    e = np.exp(-2.0 * x)
    return 2.0 * np.exp(-x) / (1.0 + e), (1.0 - e) / (1.0 + e)


def _tanh_over(g, ell):
    """``tanh(ell g) / g`` with its series near g = 0."""
    x = ell * g
    small = np.abs(x) < 1e-4
    _, t = _sech_tanh(np.where(small, 1.0, x))
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = t / np.where(small, 1.0, g)
    series = ell * (1 - x**2 / 3 + 2 * x**4 / 15)
    return np.where(small, series, direct)


def _propagation(p: PipeFrequencyParams, s):
    sig2 = p.sound_speed**2
    a = p.alpha / (2 * sig2)
    Z = p.impedance(s)
    g = np.sqrt(a**2 + s * Z / sig2 + 0j)  # principal branch, Re g >= 0
    return a, Z, g


def transfer_matrix(p: PipeFrequencyParams, s) -> np.ndarray:
    """Transfer matrix G(s), shape (..., 2, 2), for scalar or array ``s``.

    Uses ``e^{A l} = e^{a l}(cosh(g l) I + sinh(g l)/g (A - a I))`` with
    ``a = alpha / (2 sigma^2)``, normalized by cosh so long pipes do not
    overflow.  s = 0 is covered by the same expressions.
    """
    s = np.asarray(s, dtype=complex)
    sig2 = p.sound_speed**2
    ell = p.length
    a, Z, g = _propagation(p, s)
    sech, _ = _sech_tanh(ell * g)
    q = _tanh_over(g, ell)
    den = 1.0 - a * q
    G = np.empty(s.shape + (2, 2), dtype=complex)
    G[..., 0, 0] = np.exp(a * ell) * sech / den
    G[..., 0, 1] = -(Z / sig2) * q / den
    G[..., 1, 0] = s * q / den
    G[..., 1, 1] = np.exp(-a * ell) * sech / den
    return G


def transfer_matrix_exponential(p: PipeFrequencyParams, s: complex) -> np.ndarray:
    """Direct form from the propagation factors ``g_pm = a +- g``.

    Unscaled, so only suitable for moderate ``|g| l``; used to cross-check
    :func:`transfer_matrix`.
    """
    s = complex(s)
    ell = p.length
    sig2 = p.sound_speed**2
    a, Z, g = _propagation(p, s)
    gp, gm = a + g, a - g
    ep, em = np.exp(gp * ell), np.exp(gm * ell)
    d = gp - gm
    T11 = (gp * ep - gm * em) / d
    T12 = -(Z / sig2) * (ep - em) / d
    T21 = -s * (ep - em) / d
    T22 = -(gm * ep - gp * em) / d
    return np.array([[(T11 * T22 - T12 * T21) / T22, T12 / T22],
                     [-T21 / T22, 1.0 / T22]])


def transfer_matrix_hyperbolic(p: PipeFrequencyParams, s: complex) -> np.ndarray:
    """Closed sech/tanh form, valid when alpha = 0 and s != 0."""
    if p.alpha != 0:
        raise PreconditionError("the hyperbolic form requires alpha = 0")
    s = complex(s)
    if s == 0:
        raise PreconditionError("the hyperbolic form is undefined at s = 0")
    Z = p.impedance(s)
    g = np.sqrt(s * Z + 0j) / p.sound_speed
    zc = np.sqrt(Z / s + 0j)
    # the two square roots must share a branch: sigma g = s z_c
    if abs(p.sound_speed * g - s * zc) > 1e-9 * max(1.0, abs(s * zc)):
        zc = -zc
    sech, tanh = _sech_tanh(p.length * g)
    return np.array([[sech, -(zc / p.sound_speed) * tanh],
                     [(p.sound_speed / zc) * tanh, sech]])


def transfer_matrix_dc(p: PipeFrequencyParams) -> np.ndarray:
    """Analytic s = 0 limit."""
    sig2 = p.sound_speed**2
    r = p.alpha / sig2
    ell = p.length
    b = p.impedance_sign * p.beta
    g12 = -(b / sig2) * (math.expm1(r * ell) / r if r != 0 else ell)
    return np.array([[math.exp(r * ell), g12], [0.0, 1.0]], dtype=complex)


@dataclass(frozen=True, eq=False)
class FrequencyResponse:
    freqs: np.ndarray  # cyc/hr
    omegas: np.ndarray  # rad/s
    G: np.ndarray  # (n, 2, 2)

    def __post_init__(self):
        if np.any(np.diff(self.omegas) <= 0):
            raise ValueError("frequency grid must be strictly increasing")

    def coefficient(self, i: int, j: int) -> np.ndarray:
        """Samples of G_ij with 1-based indices."""
        return self.G[:, i - 1, j - 1]

    @property
    def G11(self):
        return self.coefficient(1, 1)

    @property
    def G12(self):
        return self.coefficient(1, 2)

    @property
    def G21(self):
        return self.coefficient(2, 1)

    @property
    def G22(self):
        return self.coefficient(2, 2)

    def magnitude(self, i: int, j: int) -> np.ndarray:
        return np.abs(self.coefficient(i, j))

    def phase(self, i: int, j: int) -> np.ndarray:
        return np.unwrap(np.angle(self.coefficient(i, j)))


def frequency_response(p: PipeFrequencyParams, freqs) -> FrequencyResponse:
    """Evaluate G(j omega) on a grid given in cyc/hr."""
    f = np.atleast_1d(np.asarray(freqs, dtype=float))
    if np.any(f <= 0):
        raise ValueError("frequencies must be positive")
    w = f * CYC_PER_HR
    return FrequencyResponse(f, w, transfer_matrix(p, 1j * w))


def bode_csv(responses: dict[str, FrequencyResponse]) -> str:
    """Long-format CSV: variant, frequency, then |G_ij| and phase per coefficient."""
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    cols = [f"{k}{ij}" for ij in ("11", "12", "21", "22") for k in ("mag_G", "phase_G")]
    wr.writerow(["variant", "f_cyc_per_hr"] + cols)
    for name, fr in responses.items():
        mags = {ij: fr.magnitude(int(ij[0]), int(ij[1])) for ij in ("11", "12", "21", "22")}
        phs = {ij: fr.phase(int(ij[0]), int(ij[1])) for ij in ("11", "12", "21", "22")}
        for n, f in enumerate(fr.freqs):
            row = [name, f"{f:.10g}"]
            for ij in ("11", "12", "21", "22"):
                row += [f"{mags[ij][n]:.10g}", f"{phs[ij][n]:.10g}"]
            wr.writerow(row)
    return buf.getvalue()


def discrepancy(pa: PipeFrequencyParams, pb: PipeFrequencyParams, freqs):
    """Largest relative magnitude and absolute phase gaps over the four coefficients.

    ``pb`` is the reference.  Returns two arrays over ``freqs``.
    """
    s = 1j * np.asarray(freqs, dtype=float) * CYC_PER_HR
    Ga, Gb = transfer_matrix(pa, s), transfer_matrix(pb, s)
    ma, mb = np.abs(Ga), np.abs(Gb)
    scale = np.where(mb > 0, mb, 1.0)
    mag = np.where((ma == 0) & (mb == 0), 0.0, np.abs(ma - mb) / scale)
    with np.errstate(invalid="ignore", divide="ignore"):
        ph = np.abs(np.angle(Ga / Gb))
    ph = np.where(np.isfinite(ph), ph, 0.0)
    return mag.reshape(mag.shape[:-2] + (4,)).max(-1), ph.reshape(ph.shape[:-2] + (4,)).max(-1)


class EquivalentFrequency(NamedTuple):
    f_star: float
    message: str


def max_equivalent_frequency(pa, pb, mag_tol=0.05, phase_tol=np.inf,
                             f_min=1e-2, f_max=60.0, n_grid=400, bisect_iter=60):
    """Largest f* such that both variants agree within tolerance on (0, f*].

    The discrepancy is sampled on a log grid, its running maximum (a monotone
    envelope) locates the first violation, and bisection between the
    bracketing grid points refines it.  Returns ``f_max`` when no violation
    occurs and 0 when the lowest grid point already violates.
    """
    f = np.geomspace(f_min, f_max, n_grid)

    def bad(x):
        m, p = discrepancy(pa, pb, np.atleast_1d(x))
        return (m > mag_tol) | (p > phase_tol)

    viol = bad(f)
    env = np.maximum.accumulate(viol)
    if not env.any():
        return EquivalentFrequency(float(f_max), "no violation on the grid")
    i = int(np.argmax(env))
    if i == 0:
        msg = f"discrepancy exceeds tolerance already at {f_min:g} cyc/hr"
        log.warning(msg)
        return EquivalentFrequency(0.0, msg)
    lo, hi = f[i - 1], f[i]
    for _ in range(bisect_iter):
        mid = math.sqrt(lo * hi)
        if bad(mid)[0]:
            hi = mid
        else:
            lo = mid
        if hi / lo - 1 < 1e-12:
            break
    return EquivalentFrequency(float(lo), "first violation bracketed")


# ---------------------------------------------------------------------------
# state matrices


def eigenvalues(A) -> np.ndarray:
    """Full spectrum of a square matrix, sorted by real then imaginary part."""
    A = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    try:
        ev = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("eigenvalue iteration did not converge") from exc
    return ev[np.lexsort((ev.imag, ev.real))]


class CenterOfGravity(NamedTuple):
    value: float
    eig_sum: complex
    predicted_sum: float
    rel_error: float


def center_of_gravity(A_bar, beta_bar, rtol: float = 1e-8) -> CenterOfGravity:
    """Mean eigenvalue, checked against the trace prediction ``-sum beta_bar``."""
    ev = eigenvalues(A_bar)
    beta = np.asarray(beta_bar.diagonal() if sp.issparse(beta_bar) else beta_bar, dtype=float)
    predicted = -float(np.sum(beta))
    total = complex(np.sum(ev))
    scale = max(abs(predicted), float(np.max(np.abs(ev))) if ev.size else 0.0, 1e-300)
    err = abs(total - predicted) / scale
    if predicted == 0.0 and abs(total) <= rtol * scale:
        err = 0.0
    if err > rtol:
        raise TraceIdentityError(
            f"eigenvalue sum {total:.6g} differs from -sum(beta) = {predicted:.6g}")
    return CenterOfGravity(total.real / ev.size, total, predicted, err)


def simplified_state_matrix(net_or_topo, nominal: NominalPoint) -> np.ndarray:
    """Reduced density-only matrix ``-Lambda^-1 (RQ)' R Q`` for delta = 0, alpha = 0.

    ``R_kk^2 = sigma^2 pi D_k^3 (Q_l rho)_k / (4 l_k lambda_k |phi_k|)``.
    Requires bypassed compressors and nonzero nominal flux on every edge.
    """
    topo = net_or_topo if isinstance(net_or_topo, Topology) else Topology.of(net_or_topo)
    if np.any(np.abs(nominal.mu - 1.0) > 0):
        raise PreconditionError("compressors must be bypassed (mu = 1)")
    phi = np.abs(nominal.phi)
    if np.any(phi == 0):
        raise PreconditionError("nominal flux must be nonzero on every edge")
    rho_out = topo.outlet(nominal.rho)
    R2 = (topo.sound_speed**2 * np.pi * topo.diameter**3 * rho_out
          / (4 * topo.length * topo.friction * phi))
    Q = topo.Q
    return -(sp.diags(1.0 / topo.volume) @ Q.T @ sp.diags(R2) @ Q).toarray()


def state_matrix_spectrum(net_or_topo, nominal: NominalPoint, mu=None) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues of the full state matrix and the beta diagonal at a nominal point."""
    from .linearize import state_matrix

    topo = net_or_topo if isinstance(net_or_topo, Topology) else Topology.of(net_or_topo)
    alpha, beta = friction_jacobians(topo, nominal.rho, nominal.phi)
    A = state_matrix(topo, alpha, beta, nominal.mu if mu is None else mu)
    return eigenvalues(A), beta


# ---------------------------------------------------------------------------
# poles


def pipe_poles(beta: float, sound_speed: float, length: float, m_max: int = 20) -> np.ndarray:
    """Poles of the alpha = 0 transfer matrix, shape (m_max + 1, 2).

    Column 0 holds the ``+`` branch, column 1 the ``-`` branch.  When the
    radicand is negative both poles are real and negative.
    """
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    m = np.arange(m_max + 1)
    rad = (np.pi * sound_speed / (2 * length)) ** 2 * (2 * m + 1) ** 2 - (beta / 2) ** 2
    root = 1j * np.sqrt(rad.astype(complex))
    return np.stack([-beta / 2 + root, -beta / 2 - root], axis=1)


def pole_residual(beta, sound_speed, length, zeta, delta=1) -> np.ndarray:
    """``|cosh(l gamma(zeta))|`` with ``gamma = sqrt(zeta (delta zeta + beta)) / sigma``."""
    zeta = np.asarray(zeta, dtype=complex)
    g = np.sqrt(zeta * (delta * zeta + beta)) / sound_speed
    return np.abs(np.cosh(length * g))


@dataclass(frozen=True, eq=False)
class EdgePoles:
    asymptote: float
    poles: np.ndarray


def network_poles(betas, sound_speed: float, lengths, m_max: int = 20) -> list[EdgePoles]:
    """Per-edge pole sets and asymptote abscissas ``c_k = -beta_k / 2``."""
    betas = np.asarray(betas, dtype=float)
    lengths = np.broadcast_to(np.asarray(lengths, dtype=float), betas.shape)
    return [EdgePoles(-b / 2, pipe_poles(b, sound_speed, L, m_max))
            for b, L in zip(betas, lengths)]


def cascade_fluxes(withdrawals) -> np.ndarray:
    """Steady inlet fluxes of a series chain fed at one end.

    Each pipe carries the sum of all withdrawals downstream of its inlet.
    """
    w = np.asarray(withdrawals, dtype=float)
    return np.cumsum(w[::-1])[::-1]


def spectrum_csv(eigs=None, poles=None) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["re", "im", "source"])
    for z in ([] if eigs is None else np.ravel(eigs)):
        wr.writerow([f"{z.real:.12g}", f"{z.imag:.12g}", "eig"])
    for z in ([] if poles is None else np.ravel(poles)):
        wr.writerow([f"{z.real:.12g}", f"{z.imag:.12g}", "pole"])
    return buf.getvalue()
