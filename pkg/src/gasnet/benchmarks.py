"""Benchmark networks and synthetic boundary scenarios.

The 5-node cyclic and 25-node tree layouts are readings of published
network diagrams; edge lists and compressor placements are approximate.
Load curves are smooth sums of low-frequency sinusoids standing in for
figure-only data.
"""

from __future__ import annotations

import math

from .network import (
    SUPPLY,
    WITHDRAWAL,
    Compressor,
    Network,
    Node,
    Parameters,
    Pipe,
    Profile,
    Scenario,
)

DAY = 24 * 3600.0
SOUND_SPEED = 377.964
PROFILE_STEP = 600.0


def _net(node_kinds, pipes, compressors, params) -> Network:
    nodes = tuple(Node(i, k) for i, k in node_kinds)
    pipes = tuple(Pipe(k, a, b, L * 1000.0, D, lam) for k, a, b, L, D, lam in pipes)
    return Network(nodes, pipes, tuple(compressors), params)


def load_curve(base: float, amps, periods_h, phases, horizon: float = DAY) -> Profile:
    """``base * (1 + sum a_i sin(2 pi t / P_i + p_i))`` sampled every 10 min."""

    def f(t):
        return base * (1.0 + sum(a * math.sin(2 * math.pi * t / (P * 3600.0) + p)
                                 for a, P, p in zip(amps, periods_h, phases)))

    return Profile.from_function(f, horizon, PROFILE_STEP)


# ---------------------------------------------------------------------------


CYCLIC5_LOADS = {
    # node: (base kg/s, amplitudes, periods in h, phases)
    2: (40.0, (0.20,), (24.0,), (-1.0,)),
    3: (20.0, (0.25, 0.10), (24.0, 8.0), (-1.6, 0.3)),
    4: (20.0, (0.30, 0.08, 0.05), (24.0, 6.0, 3.0), (-1.2, 1.0, 0.2)),
    5: (15.0, (0.20, 0.10), (24.0, 12.0), (-2.0, 0.5)),
}
CYCLIC5_INITIAL_RATIOS = {1: 1.02616, 2: 1.00284, 4: 1.00284}


def cyclic5(loads=None, horizon: float = DAY) -> tuple[Network, Scenario]:
    """Five nodes, five pipes with one cycle and three compressors."""
    d, lam = 0.9144, 0.01
    net = _net(
        [(1, SUPPLY), (2, WITHDRAWAL), (3, WITHDRAWAL), (4, WITHDRAWAL), (5, WITHDRAWAL)],
        [
            (1, 1, 2, 20.0, d, lam),
            (2, 2, 3, 70.0, d, lam),
            (3, 2, 4, 10.0, d, lam),
            (4, 4, 5, 80.0, d, lam),
            (5, 3, 5, 60.0, 0.635, 0.015),
        ],
        [Compressor(1, 1.7), Compressor(2, 1.7), Compressor(4, 1.7)],
        Parameters(SOUND_SPEED, rho_min=21.0, rho_max=35.0, phi_min=0.0),
    )
    loads = CYCLIC5_LOADS if loads is None else loads
    withdrawal = {j: load_curve(*spec, horizon=horizon) for j, spec in loads.items()}
    scenario = Scenario(horizon, {1: Profile.constant(21.0, horizon)}, withdrawal,
                        dict(CYCLIC5_INITIAL_RATIOS))
    return net, scenario


# ---------------------------------------------------------------------------

TREE25_PIPES = [
    # id, from, to, km, D
    (1, 1, 2, 41.0, 0.9144),
    (2, 2, 3, 41.0, 0.9144),
    (3, 3, 4, 41.0, 0.9144),
    (4, 4, 5, 31.0, 0.9144),
    (5, 5, 6, 21.0, 0.762),
    (6, 6, 7, 21.0, 0.762),
    (7, 7, 8, 21.0, 0.762),
    (8, 8, 9, 21.0, 0.762),
    (9, 9, 10, 11.0, 0.6096),
    (10, 10, 11, 21.0, 0.6096),
    (11, 2, 12, 14.0, 0.6096),
    (12, 12, 13, 11.0, 0.6096),
    (13, 3, 14, 11.0, 0.6096),
    (14, 4, 15, 21.0, 0.762),
    (15, 15, 16, 21.0, 0.6096),
    (16, 5, 17, 21.0, 0.6096),
    (17, 6, 18, 11.0, 0.6096),
    (18, 18, 19, 11.0, 0.6096),
    (19, 7, 20, 14.0, 0.6096),
    (20, 8, 21, 12.0, 0.6096),
    (21, 9, 22, 21.0, 0.6096),
    (22, 10, 23, 11.0, 0.6096),
    (23, 11, 24, 14.0, 0.6096),
    (24, 11, 25, 14.0, 0.6096),
]
TREE25_COMPRESSORS = (1, 3, 6, 8, 14)
TREE25_LOADS = {
    13: (8.0, (0.3, 0.1), (24.0, 6.0), (-1.5, 0.0)),
    14: (10.0, (0.25,), (24.0,), (-1.0,)),
    16: (12.0, (0.3, 0.05), (24.0, 4.0), (-1.8, 0.7)),
    17: (8.0, (0.2,), (24.0,), (-1.2,)),
    19: (9.0, (0.3, 0.1), (24.0, 8.0), (-1.4, 2.0)),
    20: (8.0, (0.25,), (24.0,), (-2.1,)),
    21: (10.0, (0.3, 0.08), (24.0, 12.0), (-1.6, 0.4)),
    22: (8.0, (0.2,), (24.0,), (-0.9,)),
    23: (7.0, (0.25, 0.05), (24.0, 3.0), (-1.3, 1.1)),
    24: (8.0, (0.3,), (24.0,), (-1.7,)),
    25: (7.0, (0.2, 0.1), (24.0, 6.0), (-1.1, 2.5)),
}
TREE25_INITIAL_RATIOS = {1: 1.03034, 3: 1.02473, 6: 1.0093, 8: 1.00606, 14: 1.0005}


def tree25(loads=None, horizon: float = DAY) -> tuple[Network, Scenario]:
    """Twenty-five nodes, 24 pipes (477 km in total) and five compressors."""
    kinds = [(1, SUPPLY)] + [(j, WITHDRAWAL) for j in range(2, 26)]
    pipes = [(k, a, b, L, D, 0.01) for k, a, b, L, D in TREE25_PIPES]
    net = _net(kinds, pipes, [Compressor(e, 1.5) for e in TREE25_COMPRESSORS],
               Parameters(SOUND_SPEED, rho_min=35.0, rho_max=56.0, phi_min=0.0))
    loads = TREE25_LOADS if loads is None else loads
    withdrawal = {j: load_curve(*spec, horizon=horizon) for j, spec in loads.items()}
    scenario = Scenario(horizon, {1: Profile.constant(35.0, horizon)}, withdrawal,
                        dict(TREE25_INITIAL_RATIOS))
    return net, scenario


# ---------------------------------------------------------------------------


def single_pipe(length_km=100.0, diameter=0.75, friction=0.01, sound_speed=377.0,
                supply_density=35.0, outflow=0.0, horizon=3600.0,
                compressor_max: float | None = None, rho_min=0.0, rho_max=math.inf):
    """One supply node feeding one withdrawal node through one pipe."""
    comps = [Compressor(1, compressor_max)] if compressor_max else []
    net = _net([(1, SUPPLY), (2, WITHDRAWAL)],
               [(1, 1, 2, length_km, diameter, friction)], comps,
               Parameters(sound_speed, rho_min=rho_min, rho_max=rho_max, phi_min=0.0))
    sc = Scenario(horizon, {1: Profile.constant(supply_density, horizon)},
                  {2: Profile.constant(outflow, horizon)})
    return net, sc


BENCHMARKS = {"cyclic5": cyclic5, "tree25": tree25}
