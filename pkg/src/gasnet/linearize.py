"""Adaptive linear models of the lumped network dynamics.

The nonlinear system is

    rho'       = Lambda^-1 (Q' X phi - w)
    delta phi' = -sigma^2 L^-1 (M rho + N s) - K phi|phi| / (Q_l rho)

and the model linearized about a nominal point (rho_bar, phi_bar, mu_bar,
s_bar, w_bar) is

    [rho'; delta phi'] = A_bar x - [Lambda^-1 w;
                                    sigma^2 L^-1 (N s_bar + M rho_bar + N_bar s)] + F_bar

where M, N are taken at the current ratios and M_bar, N_bar at mu_bar.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .incidence import Topology, weighted_incidence
from .state import State


class NonpositiveDensityError(ValueError):
    pass


def friction(phi: np.ndarray, rho_out: np.ndarray, K: np.ndarray) -> np.ndarray:
    """``K phi |phi| / rho_out`` componentwise."""
    if np.any(rho_out <= 0):
        raise NonpositiveDensityError("outlet density must be strictly positive")
    return K * phi * np.abs(phi) / rho_out


def friction_jacobians(topo: Topology, rho: np.ndarray, phi: np.ndarray):
    """Diagonals of the friction Jacobians in outlet density and inlet flux.

    Returns ``(alpha, beta)`` with ``alpha = K phi|phi| / (Q_l rho)^2`` and
    ``beta = 2 K |phi| / (Q_l rho)``.
    """
    rho_out = topo.outlet(rho)
    if np.any(rho_out <= 0):
        raise NonpositiveDensityError("outlet density must be strictly positive")
    K = topo.friction_coeff
    return K * phi * np.abs(phi) / rho_out**2, 2 * K * np.abs(phi) / rho_out


def state_matrix(topo: Topology, alpha, beta, mu) -> sp.csr_matrix:
    """``[[0, Lambda^-1 Q'X], [alpha Q_l - sigma^2 L^-1 M(mu), -beta]]``."""
    Vs = topo.n_supply
    M = weighted_incidence(topo, topo.edge_mu(mu))[:, Vs:]
    sig2_L = sp.diags(topo.sound_speed**2 / topo.length)
    lower_left = sp.diags(alpha) @ topo.Q_l - sig2_L @ M
    return sp.bmat([[None, topo.mass_operator],
                    [lower_left, sp.diags(-beta)]], format="csr")


def mu_sensitivity(topo: Topology, rho, s) -> sp.csr_matrix:
    """Derivative of the flux equation right-hand side in the compressor ratios.

    Entry (k, c) equals ``sigma^2 / l_k`` times the inlet density of the
    compressor edge k; all density rows are zero.
    """
    ce = topo.comp_edges
    C = ce.size
    vals = topo.sound_speed**2 / topo.length[ce] * topo.tail_values(rho, s)[ce]
    rows = topo.n_withdrawal + ce
    return sp.csr_matrix((vals, (rows, np.arange(C))),
                         shape=(topo.n_withdrawal + topo.n_edges, C))


@dataclass(frozen=True, eq=False)
class NominalPoint:
    rho: np.ndarray
    phi: np.ndarray
    mu: np.ndarray
    s: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        for name in ("rho", "phi", "mu", "s", "w"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        if np.any(self.rho <= 0):
            raise NonpositiveDensityError("nominal densities must be positive")
        if np.any(self.mu < 1 - 1e-12):
            raise ValueError("nominal compressor ratios must be >= 1")

    @property
    def state(self) -> State:
        return State(self.rho, self.phi)

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.rho, self.phi])


def jacobians(net_or_topo, nominal: NominalPoint):
    """``(alpha_bar, beta_bar)`` diagonals at the nominal point."""
    topo = _topology(net_or_topo)
    return friction_jacobians(topo, nominal.rho, nominal.phi)


def _topology(net_or_topo) -> Topology:
    if isinstance(net_or_topo, Topology):
        return net_or_topo
    return Topology.of(net_or_topo)


@dataclass(frozen=True, eq=False)
class LinearModel:
    """Linear time-invariant model about a nominal point.

    ``alpha`` and ``beta`` hold the diagonals of the friction Jacobians.
    ``A`` is the sparse state matrix, ``F`` the additive nominal term.
    """

    topology: Topology
    nominal: NominalPoint
    alpha: np.ndarray
    beta: np.ndarray
    A: sp.csr_matrix
    F: np.ndarray
    M_bar: sp.csr_matrix
    N_bar: sp.csr_matrix
    delta: int = 1

    @property
    def n_withdrawal(self) -> int:
        return self.topology.n_withdrawal

    @property
    def size(self) -> int:
        return self.A.shape[0]

    def dense_A(self) -> np.ndarray:
        return self.A.toarray()

    def linear_rhs_vec(self, x, mu, s, w) -> np.ndarray:
        topo, nom = self.topology, self.nominal
        nw = topo.n_withdrawal
        s = np.asarray(s, dtype=float)
        sig2_L = topo.sound_speed**2 / topo.length
        # M rho_bar + N s_bar at the current ratios, plus N_bar s
        pressure = topo.pressure_term(nom.rho, nom.s, mu) + self.N_bar @ s
        out = self.A @ x + self.F
        out[:nw] -= np.asarray(w, dtype=float) / topo.volume
        out[nw:] -= sig2_L * pressure
        return out

    def linear_rhs(self, state: State, mu, s, w) -> State:
        return State.from_vector(self.linear_rhs_vec(state.vector, mu, s, w), self.n_withdrawal)

    def control_form(self, s, w):
        """Split the model as ``A x + B mu + d`` for fixed boundary values.

        Returns ``(B, d)`` with B sparse of shape (n, C).
        """
        topo, nom = self.topology, self.nominal
        C = topo.comp_edges.size
        B = mu_sensitivity(topo, nom.rho, nom.s)
        d = self.linear_rhs_vec(np.zeros(self.size), np.ones(C), s, w) - B @ np.ones(C)
        return B, d

    def jac_x(self, x=None, mu=None, s=None, w=None) -> sp.csr_matrix:
        return self.A


def build_model(net_or_topo, nominal: NominalPoint, delta: int = 1) -> LinearModel:
    topo = _topology(net_or_topo)
    alpha, beta = friction_jacobians(topo, nominal.rho, nominal.phi)
    A = state_matrix(topo, alpha, beta, nominal.mu)
    Vs = topo.n_supply
    Xi_bar = weighted_incidence(topo, topo.edge_mu(nominal.mu))
    M_bar, N_bar = Xi_bar[:, Vs:].tocsr(), Xi_bar[:, :Vs].tocsr()
    rho_out = topo.outlet(nominal.rho)
    sig2_L = topo.sound_speed**2 / topo.length
    F_phi = (sig2_L * (M_bar @ nominal.rho + N_bar @ nominal.s)
             - friction(nominal.phi, rho_out, topo.friction_coeff)
             - alpha * rho_out + beta * nominal.phi)
    F = np.concatenate([np.zeros(topo.n_withdrawal), F_phi])
    return LinearModel(topo, nominal, alpha, beta, A, F, M_bar, N_bar, int(delta))


def relinearize(model: LinearModel, new_nominal: NominalPoint) -> LinearModel:
    return build_model(model.topology, new_nominal, model.delta)


def linear_rhs(model: LinearModel, state: State, mu, s, w) -> State:
    return model.linear_rhs(state, mu, s, w)
