"""Command-line front end.

Exit codes: 0 on success, 1 when a solver fails or a problem is infeasible,
2 on bad input (unreadable or invalid documents, bad flags).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import benchmarks
from .control import (
    OPTIMAL,
    ControlGrid,
    ControlSettings,
    run_mpc,
    run_oc,
)
from .error_bounds import (
    bounds_csv,
    empirical_gap,
    first_crossing,
    sinusoidal_gamma,
    time_varying_bound,
    uniform_bound,
)
from .incidence import AssemblyError, assemble, dump_coo
from .linearize import NominalPoint, NonpositiveDensityError, build_model
from .network import (
    DocumentError,
    Network,
    RefinedNetwork,
    ValidationError,
    parse_network,
    parse_scenario,
    refine,
    serialize_network,
    serialize_scenario,
    validate,
)
from .simulate import ConvergenceError, LinearDynamics, NetworkDynamics, Policy, simulate
from .spectral import (
    VARIANTS,
    PipeFrequencyParams,
    frequency_response,
    network_poles,
    bode_csv,
    spectrum_csv,
    state_matrix_spectrum,
)
from .state import Trajectory

log = logging.getLogger("gasnet")

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2

# single pipes for frequency responses: length (km), diameter, friction,
# sound speed, nominal density and flux
BODE_PIPES = {
    "pipe5km": (5.0, 0.5, 0.011, 377.0, 35.0, 300.0),
    "pipe50km": (50.0, 0.5, 0.011, 377.0, 35.0, 300.0),
}


class InputError(ValueError):
    pass


class SolverFailure(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# inputs


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc


def load_inputs(network: str, scenario: str | None):
    """Network and scenario from documents or a benchmark name."""
    if network in benchmarks.BENCHMARKS and not Path(network).exists():
        net, sc = benchmarks.BENCHMARKS[network]()
        if scenario is not None:
            sc = parse_scenario(_read(scenario), net)
        return net, sc
    net = parse_network(_read(network))
    validate(net)
    sc = None if scenario is None else parse_scenario(_read(scenario), net)
    return net, sc


def _require_scenario(sc):
    if sc is None:
        raise InputError("--scenario is required for documents that are not benchmarks")
    return sc


def _refined(net: Network, max_km: float) -> RefinedNetwork:
    if not max_km > 0:
        raise InputError("--max-km must be positive")
    return refine(net, max_km * 1000.0)


def _labels(r: RefinedNetwork):
    comp_ids = [r.parent_edge[c.edge] for c in r.compressors]
    return r.withdrawal_ids, [p.id for p in r.pipes], comp_ids


def _display(r: RefinedNetwork, traj: Trajectory):
    """Restrict a refined trajectory to original nodes and pipe inlets for plotting."""
    orig = r.original or r.network
    keep_nodes = set(orig.withdrawal_ids)
    inlets = {p.id: p.from_node for p in orig.pipes}
    ri = [i for i, j in enumerate(r.withdrawal_ids) if j in keep_nodes]
    ei = [i for i, p in enumerate(r.pipes) if inlets[r.parent_edge[p.id]] == p.from_node]
    labels = ([r.withdrawal_ids[i] for i in ri], [r.parent_edge[r.pipes[i].id] for i in ei],
              [r.parent_edge[c.edge] for c in r.compressors])
    sub = Trajectory(traj.times, traj.rho[:, ri], traj.phi[:, ei], traj.mu)
    return sub, labels


def _plot_run(r, traj, path, reference=None):
    from .plotting import plot_trajectory
    sub, labels = _display(r, traj)
    ref = None if reference is None else _display(r, reference)[0]
    plot_trajectory(sub, path, *labels, reference=ref)


def network_hash(net: Network) -> str:
    return hashlib.sha256(serialize_network(net).encode()).hexdigest()[:16]


def _write(path, text: str):
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    log.info("wrote %s", path)


def _initial(r: RefinedNetwork, sc):
    dyn = NetworkDynamics(r)
    mu0 = sc.ratio_vector(r)
    s, w = sc.supply_vector(r, 0.0), sc.withdrawal_vector(r, 0.0)
    x0 = dyn.steady_vec(mu0, s, w)
    return dyn, mu0, s, w, x0


def _nominal_model(r: RefinedNetwork, sc):
    dyn, mu0, s, w, x0 = _initial(r, sc)
    nw = dyn.n_withdrawal
    return build_model(r, NominalPoint(x0[:nw], x0[nw:], mu0, s, w)), x0


def read_policy(path: str) -> Policy:
    rows = list(csv.reader(_read(path).splitlines()))
    if len(rows) < 2 or rows[0][0] != "t":
        raise InputError(f"{path}: expected a header starting with 't'")
    data = np.array(rows[1:], dtype=float)
    return Policy(data[:, 0], data[:, 1:])


def read_trajectory(path: str) -> Trajectory:
    rows = list(csv.reader(_read(path).splitlines()))
    head = rows[0]
    data = np.array(rows[1:], dtype=float)
    kinds = [h.rsplit(".", 1)[-1] for h in head[1:]]
    cols = {k: [i + 1 for i, c in enumerate(kinds) if c == k] for k in ("rho", "phi", "mu")}
    return Trajectory(data[:, 0], data[:, cols["rho"]], data[:, cols["phi"]], data[:, cols["mu"]])


def policy_csv(times, mu, comp_ids) -> str:
    lines = [",".join(["t"] + [f"comp:{c}.mu" for c in comp_ids])]
    for t, row in zip(times, mu):
        lines.append(",".join(f"{v:.12g}" for v in (t, *row)))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# subcommands


def cmd_validate(args):
    net, sc = load_inputs(args.network, args.scenario)
    validate(net)
    print(f"ok: {len(net.nodes)} nodes, {net.n_edges} pipes, {len(net.compressors)} compressors, "
          f"{net.total_length() / 1000:.6g} km")
    if sc is not None:
        print(f"scenario: horizon {sc.horizon:g} s, {len(sc.withdrawal)} withdrawal profiles")
    return EXIT_OK


def cmd_refine(args):
    net, _ = load_inputs(args.network, None)
    r = _refined(net, args.max_km)
    print(f"{r.n_edges} edges, {r.n_withdrawal} withdrawal nodes, state size {r.n_state}")
    if args.out:
        _write(args.out, serialize_network(r.network) + "\n")
    if args.dump_coo:
        inc = assemble(r, np.ones(len(r.compressors)))
        for name in ("M", "N", "Q", "Q_l", "Q_0"):
            _write(f"{args.dump_coo}_{name}.txt", dump_coo(getattr(inc, name)))
    return EXIT_OK


def cmd_steady(args):
    net, sc = load_inputs(args.network, args.scenario)
    sc = _require_scenario(sc)
    r = _refined(net, args.max_km)
    dyn, mu0, s, w, x0 = _initial(r, sc)
    nodes, edges, comps = _labels(r)
    traj = Trajectory(np.array([0.0]), x0[None, :dyn.n_withdrawal], x0[None, dyn.n_withdrawal:],
                      mu0[None, :])
    text = traj.to_csv(nodes, edges, comps)
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_simulate(args):
    net, sc = load_inputs(args.network, args.scenario)
    sc = _require_scenario(sc)
    r = _refined(net, args.max_km)
    dyn, mu0, _, _, x0 = _initial(r, sc)
    policy = read_policy(args.policy) if args.policy else Policy.constant(mu0, sc.horizon)
    if args.model == "linear":
        model, _ = _nominal_model(r, sc)
        dyn = LinearDynamics(model, r)
    traj = simulate(dyn, sc, policy, dt=args.dt_seconds, x0=x0)
    nodes, edges, comps = _labels(r)
    _write(args.out, traj.to_csv(nodes, edges, comps))
    if args.plot:
        _plot_run(r, traj, Path(args.out).with_suffix(".png"))
    return EXIT_OK


def cmd_linearize(args):
    net, sc = load_inputs(args.network, args.scenario)
    sc = _require_scenario(sc)
    r = _refined(net, args.max_km)
    model, _ = _nominal_model(r, sc)
    _write(f"{args.out}_A.txt", dump_coo(model.A))
    _write(f"{args.out}_F.txt", "\n".join(f"{v:.17g}" for v in model.F) + "\n")
    print(f"state matrix {model.size}x{model.size}, {model.A.nnz} nonzeros")
    return EXIT_OK


def cmd_spectrum(args):
    net, sc = load_inputs(args.network, args.scenario)
    sc = _require_scenario(sc)
    r = _refined(net, args.max_km)
    model, _ = _nominal_model(r, sc)
    eigs, beta = state_matrix_spectrum(r, model.nominal)
    lengths = np.array([p.length for p in r.pipes])
    ep = network_poles(beta, r.params.sound_speed, lengths, args.poles)
    poles = np.concatenate([e.poles.ravel() for e in ep]) if ep else np.array([])
    _write(args.out, spectrum_csv(eigs, poles))
    print(f"max real part {eigs.real.max():.6g} 1/s over {eigs.size} eigenvalues")
    if args.plot:
        from .plotting import plot_spectrum
        plot_spectrum(eigs, poles, Path(args.out).with_suffix(".png"),
                      asymptotes=[e.asymptote for e in ep])
    return EXIT_OK


def cmd_bode(args):
    if args.network not in BODE_PIPES:
        raise InputError(f"--network must be one of {sorted(BODE_PIPES)}")
    L, D, lam, sigma, rho, phi = BODE_PIPES[args.network]
    base = PipeFrequencyParams(L * 1000.0, D, lam, sigma, rho, phi,
                               impedance_sign=-1 if args.literal_sign else 1)
    if args.variants == "all":
        chosen = VARIANTS
    else:
        chosen = [tuple(int(c) for c in v.split(",")) for v in args.variants.split(";")]
        if any(len(v) != 2 or set(v) - {0, 1} for v in chosen):
            raise InputError("--variants takes 'all' or 'a,d;a,d' with flags in {0,1}")
    freqs = np.logspace(math.log10(args.fmin), math.log10(args.fmax), args.points)
    responses = {f"alpha{a}_delta{d}": frequency_response(base.variant(a, d), freqs)
                 for a, d in chosen}
    _write(args.out, bode_csv(responses))
    if args.plot:
        from .plotting import plot_bode
        plot_bode(responses, Path(args.out).with_suffix(".png"))
    return EXIT_OK


def cmd_bound(args):
    net, sc = load_inputs(args.network, args.scenario)
    sc = _require_scenario(sc)
    r = _refined(net, args.max_km)
    model, _ = _nominal_model(r, sc)
    t = np.linspace(0.0, args.hours * 3600.0, args.samples)
    eu = uniform_bound(model, args.kappa, t)
    gamma, gmax = sinusoidal_gamma(args.kappa)
    et = time_varying_bound(model, gamma, gmax, t)
    _write(args.out, bounds_csv(t, eu, et))
    cross = first_crossing(t, et, 0.01)
    print(f"E_U({t[-1]:g} s) = {eu[-1]:.6g}, E_T({t[-1]:g} s) = {et[-1]:.6g}, "
          f"E_T reaches 1% at {cross:.6g} s")
    if args.plot:
        from .plotting import plot_bounds
        plot_bounds(t, eu, et, Path(args.out).with_suffix(".png"))
    return EXIT_OK


def _control(args, kind):
    net, sc = load_inputs(args.network, args.scenario)
    sc = _require_scenario(sc)
    r = _refined(net, args.max_km)
    if not args.dt_minutes > 0:
        raise InputError("--dt-minutes must be positive")
    grid = ControlGrid.uniform(sc.horizon, args.dt_minutes * 60.0)
    settings = ControlSettings(mass_flow_cost=args.mass_flow_cost)
    if kind == "mpc":
        res = run_mpc(r, sc, grid, mode=args.mode, relinearize=not args.no_relinearize,
                      settings=settings)
    else:
        res = run_oc(r, sc, grid, mode=args.mode, settings=settings)
    nodes, edges, comps = _labels(r)
    summary = {
        "command": kind,
        "network_hash": network_hash(r.network),
        "dt_minutes": args.dt_minutes,
        "mode": args.mode,
        "J": res.objective,
        "model_objective": res.model_objective,
        "status": res.status,
        "message": res.message,
        "wall_time_s": res.wall_time,
    }
    if kind == "mpc":
        summary["relinearize"] = not args.no_relinearize
    traj = res.trajectory
    _write(f"{args.out}_trajectory.csv", traj.to_csv(nodes, edges, comps))
    _write(f"{args.out}_policy.csv", policy_csv(res.times, res.mu, comps))
    reference = None
    if args.reference:
        reference = read_trajectory(args.reference)
        gap = empirical_gap(traj, reference)
        summary.update(E_rho=gap.rho, E_phi=gap.phi, E_mu=gap.mu)
    if args.reference_summary:
        ref = json.loads(_read(args.reference_summary))
        summary["J_reference"] = ref["J"]
        summary["energy_gap"] = abs(res.objective - ref["J"]) / abs(ref["J"])
    _write(f"{args.out}_summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if args.plot:
        _plot_run(r, traj, f"{args.out}_trajectory.png", reference)
    print(f"{kind} {args.mode}: status {res.status}, J = {res.objective:.6g}, "
          f"{res.wall_time:.3g} s")
    if "energy_gap" in summary:
        print(f"energy gap vs reference: {100 * summary['energy_gap']:.3g}%")
    if res.status != OPTIMAL:
        raise SolverFailure(res.message or res.status)
    return EXIT_OK


def cmd_mpc(args):
    return _control(args, "mpc")


def cmd_oc(args):
    return _control(args, "oc")


def cmd_bench(args):
    if args.name not in benchmarks.BENCHMARKS:
        raise InputError(f"--name must be one of {sorted(benchmarks.BENCHMARKS)}")
    net, sc = benchmarks.BENCHMARKS[args.name]()
    out = Path(args.emit)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / f"{args.name}_network.json", serialize_network(net) + "\n")
    _write(out / f"{args.name}_scenario.json", serialize_scenario(sc) + "\n")
    print(f"{args.name}: {len(net.nodes)} nodes, {net.n_edges} pipes, "
          f"{net.total_length() / 1000:.6g} km")
    return EXIT_OK


# ---------------------------------------------------------------------------


def _inputs(p, scenario=True, max_km=5.0):
    p.add_argument("--network", required=True,
                   help="network document or benchmark name (cyclic5, tree25)")
    if scenario:
        p.add_argument("--scenario", help="scenario document (defaults to the benchmark's)")
    p.add_argument("--max-km", type=float, default=max_km, help="refinement segment bound in km")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gasnet", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse and check documents")
    p.add_argument("--network", required=True)
    p.add_argument("--scenario")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("refine", help="split pipes into short segments")
    _inputs(p, scenario=False)
    p.add_argument("--out", help="refined network document")
    p.add_argument("--dump-coo", metavar="PREFIX", help="write incidence matrices as coordinate text")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("steady", help="steady state of the t = 0 boundary values")
    _inputs(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_steady)

    p = sub.add_parser("simulate", help="integrate the network under a ratio schedule")
    _inputs(p)
    p.add_argument("--dt-seconds", type=float, default=60.0)
    p.add_argument("--model", choices=("nonlinear", "linear"), default="nonlinear")
    p.add_argument("--policy", help="policy CSV from an mpc/oc run (default: initial ratios)")
    p.add_argument("--out", required=True)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("linearize", help="export the state matrix at the initial steady state")
    _inputs(p)
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(func=cmd_linearize)

    p = sub.add_parser("spectrum", help="state-matrix eigenvalues and pipe poles")
    _inputs(p)
    p.add_argument("--poles", type=int, default=10, help="pole index m_max per edge")
    p.add_argument("--out", required=True)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("bode", help="single-pipe transfer-matrix frequency response")
    p.add_argument("--network", default="pipe5km", help=f"one of {sorted(BODE_PIPES)}")
    p.add_argument("--variants", default="all", help="'all' or 'alpha,delta;...'")
    p.add_argument("--fmin", type=float, default=1e-2, help="cyc/hr")
    p.add_argument("--fmax", type=float, default=1e2, help="cyc/hr")
    p.add_argument("--points", type=int, default=200)
    p.add_argument("--literal-sign", action="store_true",
                   help="use impedance delta*s - beta instead of delta*s + beta")
    p.add_argument("--out", required=True)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_bode)

    p = sub.add_parser("bound", help="linearization error bounds over time")
    _inputs(p)
    p.add_argument("--kappa", type=float, default=0.2)
    p.add_argument("--hours", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=121)
    p.add_argument("--out", required=True)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_bound)

    for name, func, text in (("mpc", cmd_mpc, "receding-horizon compressor scheduling"),
                             ("oc", cmd_oc, "full-horizon compressor scheduling")):
        p = sub.add_parser(name, help=text)
        _inputs(p)
        p.add_argument("--dt-minutes", type=float, default=60.0)
        p.add_argument("--mode", choices=("linear", "nonlinear"), default="linear")
        if name == "mpc":
            p.add_argument("--no-relinearize", action="store_true",
                           help="keep the model of the initial steady state")
        p.add_argument("--mass-flow-cost", action="store_true",
                       help="weight compressor cost by cross-sectional area")
        p.add_argument("--reference", help="trajectory CSV of another run for E-metrics")
        p.add_argument("--reference-summary", help="summary JSON of another run for the energy gap")
        p.add_argument("--out", required=True, help="output prefix")
        p.add_argument("--plot", action="store_true")
        p.set_defaults(func=func)

    p = sub.add_parser("bench", help="write benchmark network and scenario documents")
    p.add_argument("--name", required=True)
    p.add_argument("--emit", required=True, help="output directory")
    p.set_defaults(func=cmd_bench)
    return ap


def _limit_threads():
    n = os.environ.get("GASNET_THREADS")
    if not n:
        return None
    try:
        n = int(n)
    except ValueError as exc:
        raise InputError("GASNET_THREADS must be an integer") from exc
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=max(1, n))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        limiter = _limit_threads()
        try:
            return args.func(args)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except (InputError, DocumentError, ValidationError, AssemblyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SolverFailure, ConvergenceError, NonpositiveDensityError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
