import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from gasnet.benchmarks import cyclic5, single_pipe
from gasnet.error_bounds import (
    bound_params,
    certify,
    empirical_gap,
    expm_norm_curve,
    expm_norm_integral,
    first_crossing,
    observed_kappa,
    sinusoidal_gamma,
    time_varying_bound,
    uniform_bound,
)
from gasnet.linearize import NominalPoint, build_model
from gasnet.network import Profile, Scenario, refine
from gasnet.simulate import LinearDynamics, NetworkDynamics, Policy, simulate
from gasnet.state import Trajectory

from netgen import random_loads, random_network


def _steady_model(net, mu, s, w, delta=1):
    dyn = NetworkDynamics(net)
    x = dyn.steady_vec(mu, s, w)
    nw = dyn.n_withdrawal
    return build_model(net, NominalPoint(x[:nw], x[nw:], mu, s, w), delta=delta), dyn


@pytest.fixture(scope="module")
def pipe3():
    net, _ = single_pipe(length_km=30.0, diameter=0.5, friction=0.011)
    r = refine(net, 10e3)
    w = np.zeros(3)
    w[r.withdrawal_ids.index(2)] = 30.0
    model, dyn = _steady_model(r, [], [35.0], w)
    return r, model, dyn


@pytest.fixture(scope="module")
def cyc_model():
    net, sc = cyclic5()
    r = refine(net, 5000.0)
    model, dyn = _steady_model(r, sc.ratio_vector(r), sc.supply_vector(r, 0.0),
                               sc.withdrawal_vector(r, 0.0))
    return r, sc, model, dyn


def test_integral_of_identity_exponential_is_t():
    assert expm_norm_integral(np.zeros((3, 3)), 7.5) == pytest.approx(7.5, rel=1e-12)
    assert expm_norm_integral(np.zeros((2, 2)), 0.0) == 0.0


def test_integral_scalar_decay():
    for t in (0.5, 3.0, 20.0):
        val = expm_norm_integral(np.array([[-1.0]]), t, quad_step=0.01 * t)
        assert abs(val - (1 - np.exp(-t))) <= 1e-4


def test_integral_rejects_bad_step_and_unstable_matrix():
    with pytest.raises(ValueError):
        expm_norm_integral(-np.eye(2), 1.0, quad_step=0.0)
    with pytest.raises(OverflowError):
        expm_norm_integral(np.array([[50.0]]), 100.0)


def test_integral_converges_for_cyclic_model(cyc_model):
    r, sc, model, dyn = cyc_model
    A = model.A.toarray()
    curve = expm_norm_curve(A, 40 * 3600.0, levels=10)
    cum = curve.cumulative
    assert np.all(np.diff(cum) >= 0)
    tail = curve.times >= 0.9 * curve.times[-1]
    assert cum[-1] - cum[tail][0] < 1e-6 * cum[-1]
    # eigen-decomposition oracle: |exp(A t)| <= cond(V) exp(max Re lambda t)
    lam, V = np.linalg.eig(A)
    kv = np.linalg.norm(V, np.inf) * np.linalg.norm(np.linalg.inv(V), np.inf)
    rate = lam.real.max()
    assert rate < 0
    assert cum[-1] <= kv * (1 - np.exp(rate * curve.times[-1])) / -rate * (1 + 1e-3)


def test_bound_constants_recomputed(cyc_model):
    r, sc, model, dyn = cyc_model
    nom = model.nominal
    rho_out = dyn.topology.outlet(nom.rho)
    K = dyn.topology.friction / (2 * dyn.topology.diameter)
    alpha = K * nom.phi * np.abs(nom.phi) / rho_out**2
    beta = 2 * K * np.abs(nom.phi) / rho_out
    bp = bound_params(model)
    assert bp.a == 4 * np.abs(alpha).max() * np.abs(nom.rho).max()
    assert bp.b == 2 * np.abs(beta).max() * np.abs(nom.phi).max()
    assert bp.state_norm == max(np.abs(nom.rho).max(), np.abs(nom.phi).max())


def test_uniform_bound_basics(pipe3):
    r, model, dyn = pipe3
    t = np.linspace(0, 3600, 13)
    assert np.all(uniform_bound(model, 0.0, t) == 0)
    e = uniform_bound(model, 0.3, t)
    assert e[0] == 0.0
    assert np.all(np.diff(e) >= 0)
    with pytest.raises(ValueError):
        uniform_bound(model, 1.0, 10.0)
    small = uniform_bound(model, 1e-4, 3600.0)
    assert uniform_bound(model, 2e-4, 3600.0) / small == pytest.approx(4.0, rel=1e-3)


def test_bounds_require_inertial_model():
    net, _ = single_pipe(length_km=20.0)
    model, _ = _steady_model(refine(net, 10e3), [], [35.0], np.array([0.0, 20.0]), delta=0)
    with pytest.raises(ValueError, match="delta"):
        uniform_bound(model, 0.1, 10.0)
    with pytest.raises(ValueError, match="delta"):
        time_varying_bound(model, lambda t: 0 * t, 0.1, 10.0)


def test_time_varying_bound_basics(pipe3):
    r, model, dyn = pipe3
    t = np.linspace(0, 7200, 25)
    assert np.all(time_varying_bound(model, lambda tau: 0 * np.asarray(tau), 0.5, t) == 0)
    g, gmax = sinusoidal_gamma(0.7)
    e = time_varying_bound(model, g, gmax, t)
    assert e[0] == 0.0 and np.all(np.diff(e) >= -1e-15) and np.all(e >= 0)
    with pytest.raises(ValueError):
        sinusoidal_gamma(1.0)
    with pytest.raises(ValueError):
        time_varying_bound(model, lambda tau: 0.9 + 0 * np.asarray(tau), 0.5, 100.0)


def test_constant_gamma_reproduces_uniform_bound(pipe3):
    r, model, dyn = pipe3
    k = 0.25
    t = np.array([600.0, 1800.0, 3600.0])
    tv = time_varying_bound(model, lambda tau: k + 0 * np.asarray(tau), k, t)
    np.testing.assert_allclose(tv, uniform_bound(model, k, t), rtol=1e-10)


def test_first_crossing():
    t = np.array([0.0, 1.0, 2.0, 3.0])
    assert first_crossing(t, [0, 0.5, 1.5, 2.0], 1.0) == pytest.approx(1.5)
    assert first_crossing(t, [0, 0.5, 0.6, 0.7], 1.0) == np.inf
    assert first_crossing(t, [2, 3, 4, 5], 1.0) == 0.0


def _traj(rho, phi, mu=None, times=None):
    rho, phi = np.atleast_2d(rho), np.atleast_2d(phi)
    n = len(rho)
    times = np.arange(n, dtype=float) if times is None else times
    mu = np.ones((n, 1)) if mu is None else np.atleast_2d(mu)
    return Trajectory(times, rho, phi, mu)


def test_empirical_gap_examples():
    rng = np.random.default_rng(0)
    rho, phi = rng.uniform(20, 40, (5, 4)), rng.uniform(10, 200, (5, 6))
    a = _traj(rho, phi)
    assert empirical_gap(a, a) == (0.0, 0.0, 0.0)
    b = _traj(1.01 * rho, phi)
    assert empirical_gap(a, b).rho == pytest.approx(2 * 0.01 / 2.01 * 100, rel=1e-12)
    assert empirical_gap(a, b).rho == pytest.approx(0.995, abs=1e-3)
    with pytest.raises(ValueError):
        empirical_gap(a, _traj(rho, phi, times=np.arange(5) * 2.0))


def _load_step(net, w0, factor, horizon=3600.0):
    wd = {}
    for j, v in zip(net.withdrawal_ids, w0):
        if v > 0:
            wd[j] = Profile((0.0, 600.0, horizon), (v, v * factor, v * factor))
    return wd


def _certify_run(r, model, dyn, supply, wd, mu, dt=60.0, horizon=3600.0):
    sc = Scenario(horizon, supply, wd)
    pol = Policy.constant(mu, horizon)
    x0 = model.nominal.vector
    nl = simulate(dyn, sc, pol, dt=dt, x0=x0)
    li = simulate(LinearDynamics(model, r), sc, pol, dt=dt, x0=x0)
    return certify(model, nl, li, kappa_max=0.2)


def test_certified_dominance_three_segment_pipe(pipe3):
    r, model, dyn = pipe3
    wd = _load_step(r, model.nominal.w, 1.15)
    c = _certify_run(r, model, dyn, {1: Profile.constant(35.0, 3600.0)}, wd, [])
    assert c.hypothesis_met and c.kappa <= 0.2
    assert c.dominated and c.status == "certified"
    assert np.all(c.gap <= c.bound + 1e-12)
    assert c.gap.max() > 0


def test_certified_dominance_cyclic(cyc_model):
    r, sc, model, dyn = cyc_model
    wd = _load_step(r, model.nominal.w, 1.02)
    c = _certify_run(r, model, dyn, sc.supply, wd, model.nominal.mu)
    assert c.hypothesis_met and c.kappa <= 0.2
    assert c.dominated


def test_hypothesis_violation_is_reported(pipe3):
    r, model, dyn = pipe3
    wd = _load_step(r, model.nominal.w, 2.0)
    c = _certify_run(r, model, dyn, {1: Profile.constant(35.0, 3600.0)}, wd, [])
    assert c.kappa > 0.2
    assert not c.hypothesis_met and c.status == "hypothesis not met"


def test_observed_kappa_of_nominal_is_zero(pipe3):
    r, model, dyn = pipe3
    nom = model.nominal
    tr = _traj(np.tile(nom.rho, (3, 1)), np.tile(nom.phi, (3, 1)), np.zeros((3, 0)))
    assert observed_kappa(tr, model) == 0.0


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(2, 8), factor=st.floats(0.9, 1.1))
def test_certified_dominance_random(seed, n, factor):
    rng = np.random.default_rng(seed)
    net = random_network(rng, n, 1, n_comp=1, extra=0)
    w = random_loads(rng, net, total=10.0)
    w[w == 0] = 1.0  # every edge of a tree then carries flow
    mu = np.full(1, 1.05)
    model, dyn = _steady_model(net, mu, [40.0], w)
    c = _certify_run(net, model, dyn, {1: Profile.constant(40.0, 3600.0)},
                     _load_step(net, w, factor), mu, dt=120.0)
    assume(c.hypothesis_met)
    assert c.dominated
