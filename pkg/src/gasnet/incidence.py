"""Matrices of the lumped network system.

For a refined network with E edges, V_s supply and V_w withdrawal nodes:

* ``Xi`` (E x V): row k has ``-mu_k`` at the tail node and ``1`` at the head.
* ``M`` / ``N``: withdrawal / supply columns of ``Xi``.
* ``Q = sign(M)`` with positive part ``Q_l`` (heads) and negative part ``Q_0``.
* ``L``, ``K``, ``X``: segment lengths, ``lambda / (2 D)``, cross sections.
* ``Lambda = Q_l' X L Q_l``: diagonal nodal volumes.

Diagonal matrices are kept as 1-D arrays; the rest are CSR matrices.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .network import SUPPLY, Network, edge_ratios


class AssemblyError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Topology:
    """Ratio-independent index data of a network.

    ``head[k]`` is the withdrawal-block index of the outlet node of edge k.
    ``tail[k]`` is the block index of the inlet node, which lies in the supply
    block when ``tail_is_supply[k]``.
    """

    n_edges: int
    n_supply: int
    n_withdrawal: int
    head: np.ndarray
    tail: np.ndarray
    tail_is_supply: np.ndarray
    comp_edges: np.ndarray
    length: np.ndarray
    friction_coeff: np.ndarray
    area: np.ndarray
    diameter: np.ndarray
    friction: np.ndarray
    sound_speed: float

    @classmethod
    def of(cls, net: Network) -> "Topology":
        kind = {n.id: n.kind for n in net.nodes}
        head, tail, tsup = [], [], []
        for p in net.pipes:
            if kind[p.to_node] == SUPPLY:
                raise AssemblyError(f"edge {p.id} enters supply node {p.to_node}")
            head.append(net.node_index(p.to_node))
            tail.append(net.node_index(p.from_node))
            tsup.append(kind[p.from_node] == SUPPLY)
        D = np.array([p.diameter for p in net.pipes])
        lam = np.array([p.friction for p in net.pipes])
        return cls(
            n_edges=net.n_edges,
            n_supply=net.n_supply,
            n_withdrawal=net.n_withdrawal,
            head=np.array(head, dtype=int),
            tail=np.array(tail, dtype=int),
            tail_is_supply=np.array(tsup, dtype=bool),
            comp_edges=np.array([net.edge_index(c.edge) for c in net.compressors], dtype=int),
            length=np.array([p.length for p in net.pipes]),
            friction_coeff=lam / (2 * D),
            area=np.pi * D**2 / 4,
            diameter=D,
            friction=lam,
            sound_speed=float(net.params.sound_speed),
        )

    def tail_values(self, rho: np.ndarray, s: np.ndarray) -> np.ndarray:
        """Inlet-node density of every edge (supply density or state)."""
        s = np.asarray(s, dtype=float)
        out = np.empty(self.n_edges)
        sup = self.tail_is_supply
        out[sup] = s[self.tail[sup]]
        out[~sup] = rho[self.tail[~sup]]
        return out

    def outlet(self, rho: np.ndarray) -> np.ndarray:
        """``Q_l rho``: the outlet density of every edge."""
        return rho[self.head]

    def edge_mu(self, mu) -> np.ndarray:
        out = np.ones(self.n_edges)
        out[self.comp_edges] = np.asarray(mu, dtype=float)
        return out

    def pressure_term(self, rho, s, mu) -> np.ndarray:
        """``M rho + N s`` evaluated without forming the matrices."""
        return rho[self.head] - self.edge_mu(mu) * self.tail_values(rho, s)

    @cached_property
    def Q(self) -> sp.csr_matrix:
        E = self.n_edges
        rows = np.arange(E)
        w = ~self.tail_is_supply
        r = np.concatenate([rows, rows[w]])
        c = np.concatenate([self.head, self.tail[w]])
        v = np.concatenate([np.ones(E), -np.ones(w.sum())])
        return sp.csr_matrix((v, (r, c)), shape=(E, self.n_withdrawal))

    @cached_property
    def Q_l(self) -> sp.csr_matrix:
        return self.Q.maximum(0).tocsr()

    @cached_property
    def Q_0(self) -> sp.csr_matrix:
        return self.Q.minimum(0).tocsr()

    @cached_property
    def volume(self) -> np.ndarray:
        vol = np.zeros(self.n_withdrawal)
        np.add.at(vol, self.head, self.area * self.length)
        if np.any(vol <= 0):
            bad = np.flatnonzero(vol <= 0)
            raise AssemblyError(
                f"withdrawal nodes at positions {bad.tolist()} have no incoming edge; "
                "the volume matrix is singular")
        return vol

    @cached_property
    def mass_operator(self) -> sp.csr_matrix:
        """``Lambda^-1 Q' X``: maps edge fluxes to nodal density rates."""
        return (sp.diags(1.0 / self.volume) @ self.Q.T @ sp.diags(self.area)).tocsr()


@dataclass(frozen=True, eq=False)
class IncidenceSet:
    Xi: sp.csr_matrix
    M: sp.csr_matrix
    N: sp.csr_matrix
    Q: sp.csr_matrix
    Q_l: sp.csr_matrix
    Q_0: sp.csr_matrix
    length: np.ndarray
    friction_coeff: np.ndarray
    area: np.ndarray
    volume: np.ndarray

    @property
    def L(self):
        return sp.diags(self.length)

    @property
    def K(self):
        return sp.diags(self.friction_coeff)

    @property
    def X(self):
        return sp.diags(self.area)

    @property
    def Lambda(self):
        return sp.diags(self.volume)

    @property
    def Lambda_inv(self):
        return sp.diags(1.0 / self.volume)


def weighted_incidence(topo: Topology, mu_edges: np.ndarray) -> sp.csr_matrix:
    E, Vs = topo.n_edges, topo.n_supply
    rows = np.arange(E)
    tail_col = np.where(topo.tail_is_supply, topo.tail, Vs + topo.tail)
    head_col = Vs + topo.head
    r = np.concatenate([rows, rows])
    c = np.concatenate([tail_col, head_col])
    v = np.concatenate([-mu_edges, np.ones(E)])
    return sp.csr_matrix((v, (r, c)), shape=(E, Vs + topo.n_withdrawal))


def assemble(net: Network, mu) -> IncidenceSet:
    """Assemble every matrix of the lumped system at compressor ratios ``mu``."""
    mu_e = edge_ratios(net, mu)
    topo = Topology.of(net)
    Xi = weighted_incidence(topo, mu_e)
    Vs = topo.n_supply
    return IncidenceSet(
        Xi=Xi,
        M=Xi[:, Vs:].tocsr(),
        N=Xi[:, :Vs].tocsr(),
        Q=topo.Q,
        Q_l=topo.Q_l,
        Q_0=topo.Q_0,
        length=topo.length,
        friction_coeff=topo.friction_coeff,
        area=topo.area,
        volume=topo.volume,
    )


def volume_matrix(net: Network) -> np.ndarray:
    """Diagonal of ``Lambda``: summed volume of the segments entering each node."""
    return Topology.of(net).volume


def dump_coo(matrix) -> str:
    """Coordinate text, one ``row col value`` line per stored entry (0-based)."""
    if not sp.issparse(matrix):
        arr = np.asarray(matrix)
        matrix = sp.diags(arr) if arr.ndim == 1 else sp.coo_matrix(arr)
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    lines = [f"# shape {coo.shape[0]} {coo.shape[1]}"]
    lines += [f"{coo.row[i]} {coo.col[i]} {coo.data[i]:.17g}" for i in order]
    return "\n".join(lines) + "\n"
