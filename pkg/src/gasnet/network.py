"""Pipeline network descriptions, boundary scenarios and graph refinement.

Networks are read from and written to a JSON document::

    {
      "nodes": [{"id": 1, "kind": "supply"}, {"id": 2, "kind": "withdrawal"}],
      "pipes": [{"id": 1, "from": 1, "to": 2, "length_km": 100,
                 "diameter_m": 0.75, "friction": 0.01}],
      "compressors": [{"edge": 1, "max_ratio": 1.5, "efficiency": 1.0}],
      "parameters": {"sound_speed_mps": 377, "rho_min": 21, "rho_max": 35,
                     "phi_min": 0, "phi_max": null},
      "profiles": {"1": [[0, 21], [3600, 21]]}
    }

Lengths are given in km in documents and stored in metres.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

SUPPLY = "supply"
WITHDRAWAL = "withdrawal"


class DocumentError(ValueError):
    """Malformed network or scenario document."""


class ValidationError(ValueError):
    """A network violates a structural invariant."""


@dataclass(frozen=True)
class Node:
    id: int
    kind: str


@dataclass(frozen=True)
class Pipe:
    id: int
    from_node: int
    to_node: int
    length: float
    diameter: float
    friction: float

    @property
    def area(self) -> float:
        return math.pi * self.diameter**2 / 4.0


@dataclass(frozen=True)
class Compressor:
    edge: int
    max_ratio: float
    efficiency: float = 1.0


@dataclass(frozen=True)
class Parameters:
    sound_speed: float
    rho_min: float = 0.0
    rho_max: float = math.inf
    phi_min: float = 0.0
    phi_max: float = math.inf


@dataclass(frozen=True)
class Network:
    """Directed pipeline graph with supply nodes listed before withdrawal nodes."""

    nodes: tuple[Node, ...]
    pipes: tuple[Pipe, ...]
    compressors: tuple[Compressor, ...]
    params: Parameters

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "pipes", tuple(self.pipes))
        object.__setattr__(self, "compressors", tuple(self.compressors))
        validate(self)
        object.__setattr__(self, "_edge_pos", {p.id: k for k, p in enumerate(self.pipes)})
        pos = {i: k for k, i in enumerate(self.supply_ids)}
        pos.update({j: k for k, j in enumerate(self.withdrawal_ids)})
        object.__setattr__(self, "_node_pos", pos)

    @property
    def supply_ids(self) -> list[int]:
        return [n.id for n in self.nodes if n.kind == SUPPLY]

    @property
    def withdrawal_ids(self) -> list[int]:
        return [n.id for n in self.nodes if n.kind == WITHDRAWAL]

    @property
    def n_edges(self) -> int:
        return len(self.pipes)

    @property
    def n_supply(self) -> int:
        return len(self.supply_ids)

    @property
    def n_withdrawal(self) -> int:
        return len(self.withdrawal_ids)

    @property
    def n_state(self) -> int:
        return self.n_withdrawal + self.n_edges

    @property
    def compressor_edges(self) -> list[int]:
        return [c.edge for c in self.compressors]

    def edge_index(self, edge_id: int) -> int:
        return self._edge_pos[edge_id]

    def node_index(self, node_id: int) -> int:
        """Position of a node within its own (supply or withdrawal) block."""
        return self._node_pos[node_id]

    def total_length(self) -> float:
        return float(sum(p.length for p in self.pipes))

    @property
    def max_ratios(self) -> np.ndarray:
        return np.array([c.max_ratio for c in self.compressors], dtype=float)


@dataclass(frozen=True)
class RefinedNetwork:
    """A network whose segments are all shorter than ``segment_bound``.

    ``parent_edge`` maps each refined edge id to the id of the original edge
    it was cut from.
    """

    network: Network
    parent_edge: Mapping[int, int]
    segment_bound: float
    original: Network | None = field(default=None, compare=False)

    def __getattr__(self, name):
        # delegate the Network interface
        if name == "network":
            raise AttributeError(name)
        return getattr(self.network, name)


def validate(net: Network) -> None:
    kinds = {}
    for n in net.nodes:
        if n.kind not in (SUPPLY, WITHDRAWAL):
            raise ValidationError(f"node {n.id}: unknown kind {n.kind!r}")
        if n.id in kinds:
            raise ValidationError(f"duplicate node id {n.id}")
        kinds[n.id] = n.kind
    if not any(k == SUPPLY for k in kinds.values()):
        raise ValidationError("nonempty supply set required")
    if not any(k == WITHDRAWAL for k in kinds.values()):
        raise ValidationError("nonempty withdrawal set required")
    seen_withdrawal = False
    for n in net.nodes:
        if n.kind == WITHDRAWAL:
            seen_withdrawal = True
        elif seen_withdrawal:
            raise ValidationError(
                f"supply node {n.id} listed after a withdrawal node; "
                "supply nodes must precede withdrawal nodes")

    edge_ids = set()
    for p in net.pipes:
        if p.id in edge_ids:
            raise ValidationError(f"duplicate pipe id {p.id}")
        edge_ids.add(p.id)
        if p.from_node not in kinds or p.to_node not in kinds:
            raise ValidationError(f"pipe {p.id} references an unknown node")
        if p.from_node == p.to_node:
            raise ValidationError(f"pipe {p.id} is a self-loop")
        if not (p.length > 0 and p.diameter > 0 and p.friction > 0):
            raise ValidationError(
                f"pipe {p.id}: length, diameter and friction must be positive")
        if kinds[p.to_node] == SUPPLY:
            raise ValidationError(
                f"pipe {p.id} points into supply node {p.to_node}; edges "
                "incident to supply nodes must be directed away from them")

    comp_edges = set()
    for c in net.compressors:
        if c.edge not in edge_ids:
            raise ValidationError(f"compressor on unknown edge {c.edge}")
        if c.edge in comp_edges:
            raise ValidationError(f"two compressors on edge {c.edge}")
        comp_edges.add(c.edge)
        if c.max_ratio < 1:
            raise ValidationError(f"compressor {c.edge}: max_ratio must be >= 1")
        if c.efficiency <= 0:
            raise ValidationError(f"compressor {c.edge}: efficiency must be positive")

    if net.params.sound_speed <= 0:
        raise ValidationError("sound speed must be positive")
    if net.params.rho_min > net.params.rho_max:
        raise ValidationError("rho_min exceeds rho_max")
    if net.params.phi_min > net.params.phi_max:
        raise ValidationError("phi_min exceeds phi_max")

    # connectivity of the underlying undirected graph
    adj = {i: set() for i in kinds}
    for p in net.pipes:
        adj[p.from_node].add(p.to_node)
        adj[p.to_node].add(p.from_node)
    start = net.nodes[0].id
    stack, reached = [start], {start}
    while stack:
        for j in adj[stack.pop()]:
            if j not in reached:
                reached.add(j)
                stack.append(j)
    if len(reached) != len(kinds):
        missing = sorted(set(kinds) - reached)
        raise ValidationError(f"graph is disconnected; unreachable nodes {missing}")


def refine(net: Network | RefinedNetwork, max_length: float) -> RefinedNetwork:
    """Split every pipe into ``ceil(L / max_length)`` equal segments.

    Inserted nodes are zero-withdrawal nodes numbered after the largest
    existing node id. A compressor moves to the first segment of its pipe so
    it stays at the pipe inlet.
    """
    if not max_length > 0:
        raise ValueError("max_length must be positive")
    if isinstance(net, RefinedNetwork):
        base, parent_of = net.network, dict(net.parent_edge)
        original = net.original
    else:
        base, parent_of, original = net, None, net

    next_node = max(n.id for n in base.nodes) + 1
    nodes = list(base.nodes)
    pipes: list[Pipe] = []
    parent: dict[int, int] = {}
    first_segment: dict[int, int] = {}
    for p in base.pipes:
        # relative slack keeps exact multiples from gaining a segment
        n_seg = max(1, math.ceil(p.length / max_length * (1 - 1e-12)))
        seg_len = p.length / n_seg
        tail = p.from_node
        for s in range(n_seg):
            if s == n_seg - 1:
                head = p.to_node
            else:
                head = next_node
                nodes.append(Node(head, WITHDRAWAL))
                next_node += 1
            eid = len(pipes) + 1
            pipes.append(Pipe(eid, tail, head, seg_len, p.diameter, p.friction))
            parent[eid] = parent_of[p.id] if parent_of else p.id
            if s == 0:
                first_segment[p.id] = eid
            tail = head
    compressors = [Compressor(first_segment[c.edge], c.max_ratio, c.efficiency)
                   for c in base.compressors]
    refined = Network(tuple(nodes), tuple(pipes), tuple(compressors), base.params)
    return RefinedNetwork(refined, parent, max_length, original)


# ---------------------------------------------------------------------------
# time profiles and scenarios


@dataclass(frozen=True)
class Profile:
    """Piecewise-linear time series, held constant beyond its breakpoints."""

    times: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size == 0 or t.size != len(self.values):
            raise ValueError("profile needs matching, nonempty times and values")
        if np.any(np.diff(t) <= 0):
            raise ValueError("profile times must be strictly increasing")

    @classmethod
    def constant(cls, value: float, horizon: float = 0.0) -> "Profile":
        if horizon > 0:
            return cls((0.0, float(horizon)), (float(value), float(value)))
        return cls((0.0,), (float(value),))

    @classmethod
    def from_function(cls, func, horizon: float, step: float) -> "Profile":
        t = np.linspace(0.0, horizon, int(round(horizon / step)) + 1)
        return cls(tuple(float(x) for x in t), tuple(float(func(x)) for x in t))

    def __call__(self, t):
        return np.interp(t, self.times, self.values)

    def as_pairs(self) -> list[list[float]]:
        return [[float(t), float(v)] for t, v in zip(self.times, self.values)]


def sample_profile(profile: Profile, t: float, horizon: float) -> float:
    if t < -1e-9 * max(1.0, horizon) or t > horizon * (1 + 1e-12) + 1e-9:
        raise ValueError(f"time {t} outside [0, {horizon}]")
    return float(profile(t))


@dataclass(frozen=True)
class Scenario:
    """Boundary conditions over ``[0, horizon]`` seconds.

    ``supply`` holds densities (kg/m^3) per supply node id, ``withdrawal``
    mass outflows (kg/s) per withdrawal node id. Nodes missing from
    ``withdrawal`` draw nothing. ``initial_ratios`` optionally fixes the
    compressor ratios of the initial steady state, keyed by edge id.
    """

    horizon: float
    supply: Mapping[int, Profile]
    withdrawal: Mapping[int, Profile]
    initial_ratios: Mapping[int, float] | None = None

    def _check(self, t):
        if t < -1e-9 * max(1.0, self.horizon) or t > self.horizon * (1 + 1e-12) + 1e-9:
            raise ValueError(f"time {t} outside [0, {self.horizon}]")

    def supply_vector(self, net: Network, t: float) -> np.ndarray:
        self._check(t)
        out = []
        for i in net.supply_ids:
            if i not in self.supply:
                raise ValidationError(f"no density profile for supply node {i}")
            out.append(float(self.supply[i](t)))
        s = np.array(out)
        if np.any(s <= 0):
            raise ValidationError("supply densities must be strictly positive")
        return s

    def withdrawal_vector(self, net: Network, t: float) -> np.ndarray:
        self._check(t)
        return np.array([float(self.withdrawal[j](t)) if j in self.withdrawal else 0.0
                         for j in net.withdrawal_ids])

    def ratio_vector(self, net: Network) -> np.ndarray:
        init = self.initial_ratios or {}
        out = []
        parent = getattr(net, "parent_edge", None)
        for c in net.compressors:
            key = parent[c.edge] if parent else c.edge
            out.append(float(init.get(key, 1.0)))
        return np.array(out)


# ---------------------------------------------------------------------------
# documents


def _load(text: str) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DocumentError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise DocumentError("top level must be an object")
    return doc


def _field(obj: dict, key: str, where: str, cast=float, default=None):
    if key not in obj or obj[key] is None:
        if default is not None:
            return default
        raise DocumentError(f"{where}: missing field {key!r}")
    try:
        return cast(obj[key])
    except (TypeError, ValueError) as exc:
        raise DocumentError(f"{where}: bad value for {key!r}: {obj[key]!r}") from exc


def _parse_profiles(raw: dict, where: str = "profiles") -> dict[int, Profile]:
    out = {}
    for key, pairs in raw.items():
        try:
            arr = np.asarray(pairs, dtype=float)
            if arr.ndim != 2 or arr.shape[1] != 2:
                raise ValueError
            out[int(key)] = Profile(tuple(arr[:, 0]), tuple(arr[:, 1]))
        except (TypeError, ValueError) as exc:
            raise DocumentError(f"{where}[{key!r}]: expected [[t_s, value], ...]") from exc
    return out


def network_from_dict(doc: dict) -> Network:
    for key in ("nodes", "pipes", "parameters"):
        if key not in doc:
            raise DocumentError(f"missing top-level key {key!r}")
    nodes = []
    for i, n in enumerate(doc["nodes"]):
        where = f"nodes[{i}]"
        kind = _field(n, "kind", where, str)
        nodes.append(Node(_field(n, "id", where, int), kind))
    pipes = []
    for i, p in enumerate(doc["pipes"]):
        where = f"pipes[{i}]"
        pipes.append(Pipe(
            _field(p, "id", where, int),
            _field(p, "from", where, int),
            _field(p, "to", where, int),
            _field(p, "length_km", where) * 1000.0,
            _field(p, "diameter_m", where),
            _field(p, "friction", where),
        ))
    comps = []
    for i, c in enumerate(doc.get("compressors", [])):
        where = f"compressors[{i}]"
        comps.append(Compressor(_field(c, "edge", where, int),
                                _field(c, "max_ratio", where),
                                _field(c, "efficiency", where, default=1.0)))
    par = doc["parameters"]
    params = Parameters(
        sound_speed=_field(par, "sound_speed_mps", "parameters"),
        rho_min=_field(par, "rho_min", "parameters", default=0.0),
        rho_max=_field(par, "rho_max", "parameters", default=math.inf),
        phi_min=_field(par, "phi_min", "parameters", default=0.0),
        phi_max=_field(par, "phi_max", "parameters", default=math.inf),
    )
    return Network(tuple(nodes), tuple(pipes), tuple(comps), params)


def parse_network(text: str) -> Network:
    return network_from_dict(_load(text))


def network_to_dict(net: Network) -> dict:
    p = net.params
    return {
        "nodes": [{"id": n.id, "kind": n.kind} for n in net.nodes],
        "pipes": [{"id": q.id, "from": q.from_node, "to": q.to_node,
                   "length_km": q.length / 1000.0, "diameter_m": q.diameter,
                   "friction": q.friction} for q in net.pipes],
        "compressors": [{"edge": c.edge, "max_ratio": c.max_ratio,
                         "efficiency": c.efficiency} for c in net.compressors],
        "parameters": {
            "sound_speed_mps": p.sound_speed,
            "rho_min": p.rho_min,
            "rho_max": None if math.isinf(p.rho_max) else p.rho_max,
            "phi_min": p.phi_min,
            "phi_max": None if math.isinf(p.phi_max) else p.phi_max,
        },
    }


def serialize_network(net: Network) -> str:
    return json.dumps(network_to_dict(net), indent=2)


def parse_scenario(text: str, net: Network) -> Scenario:
    """Read a scenario document.

    Keys: ``horizon_s``, ``profiles`` (node id -> [[t_s, value], ...]) and
    the optional ``initial_ratios`` (edge id -> ratio). A profile belongs to
    the supply set or the withdrawal set according to the node's kind.
    """
    doc = _load(text)
    horizon = _field(doc, "horizon_s", "scenario")
    profiles = _parse_profiles(doc.get("profiles", {}))
    kinds = {n.id: n.kind for n in net.nodes}
    supply, withdrawal = {}, {}
    for nid, prof in profiles.items():
        if nid not in kinds:
            raise DocumentError(f"profiles: unknown node {nid}")
        (supply if kinds[nid] == SUPPLY else withdrawal)[nid] = prof
    missing = [i for i in net.supply_ids if i not in supply]
    if missing:
        raise ValidationError(f"supply nodes without a density profile: {missing}")
    ratios = {int(k): float(v) for k, v in doc.get("initial_ratios", {}).items()}
    for e, r in ratios.items():
        if e not in net.compressor_edges:
            raise DocumentError(f"initial_ratios: edge {e} has no compressor")
        if r < 1:
            raise ValidationError(f"initial ratio on edge {e} is below 1")
    return Scenario(horizon, supply, withdrawal, ratios or None)


def scenario_to_dict(sc: Scenario) -> dict:
    profiles = {str(k): v.as_pairs() for k, v in {**sc.supply, **sc.withdrawal}.items()}
    doc = {"horizon_s": sc.horizon, "profiles": profiles}
    if sc.initial_ratios:
        doc["initial_ratios"] = {str(k): v for k, v in sc.initial_ratios.items()}
    return doc


def serialize_scenario(sc: Scenario) -> str:
    return json.dumps(scenario_to_dict(sc), indent=2)


def edge_ratios(net: Network, mu: Sequence[float] | np.ndarray) -> np.ndarray:
    """Expand a per-compressor ratio vector to one ratio per edge."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    if mu.size != len(net.compressors):
        raise ValueError(f"expected {len(net.compressors)} compressor ratios, got {mu.size}")
    if np.any(mu < 1 - 1e-12):
        raise ValueError("compressor ratios must be >= 1")
    out = np.ones(net.n_edges)
    for c, m in zip(net.compressors, mu):
        out[net.edge_index(c.edge)] = m
    return out
