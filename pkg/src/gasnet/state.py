from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class State:
    """Withdrawal-node densities (kg/m^3) and edge inlet fluxes (kg/m^2 s)."""

    rho: np.ndarray
    phi: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.rho, self.phi])

    @classmethod
    def from_vector(cls, x: np.ndarray, n_withdrawal: int) -> "State":
        x = np.asarray(x, dtype=float)
        return cls(x[:n_withdrawal].copy(), x[n_withdrawal:].copy())

    def __sub__(self, other: "State") -> "State":
        return State(self.rho - other.rho, self.phi - other.phi)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled states and applied compressor ratios.

    ``rho`` is (n_t, V_w), ``phi`` is (n_t, E), ``mu`` is (n_t, C); row 0 is
    the initial condition.
    """

    times: np.ndarray
    rho: np.ndarray
    phi: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        n = len(self.times)
        if not (len(self.rho) == len(self.phi) == len(self.mu) == n):
            raise ValueError("trajectory arrays must share the time axis")
        if n > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must increase")

    def state(self, m: int) -> State:
        return State(self.rho[m], self.phi[m])

    @property
    def states(self) -> np.ndarray:
        return np.hstack([self.rho, self.phi])

    def to_csv(self, node_ids, edge_ids, comp_ids) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"node:{i}.rho" for i in node_ids]
                   + [f"edge:{k}.phi" for k in edge_ids]
                   + [f"comp:{c}.mu" for c in comp_ids])
        for m, t in enumerate(self.times):
            row = [t, *self.rho[m], *self.phi[m], *self.mu[m]]
            w.writerow([f"{v:.12g}" for v in row])
        return buf.getvalue()
