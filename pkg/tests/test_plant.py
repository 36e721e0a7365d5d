import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from ctrlmac_cosim.plant import (
    DemandProfile, ModelError, PlantDivergence, PlantState, SubsystemModel, TankParams,
    build_dma_plant, clamp_valve, customer_demand_at, demand_at, event_check, event_flags, feedback_input,
    holder_update, integrate_step, is_critical, leak_at, overshoot_pct,
)


def scalar(a):
    return SubsystemModel([[a]], [[1.0]], [[-1.0]], ref_levels=[3.0])


def state(xi, v=None):
    xi = np.atleast_1d(np.asarray(xi, float))
    v = np.zeros(1) if v is None else np.atleast_1d(np.asarray(v, float))
    return PlantState(xi, xi.copy(), v)


def test_integrator_example():
    m = SubsystemModel([[0.0]], [[1.0]], [[-1.0]], ref_levels=[3.0])
    assert integrate_step(m, state(2.0, 1.0), 0.0, 1.0).xi[0] == pytest.approx(3.0)


def test_exponential_decay_example():
    out = integrate_step(scalar(-0.5), state(2.0), 0.0, 1.0)
    assert out.xi[0] == pytest.approx(2 * math.exp(-0.5), rel=1e-12)
    assert out.xi[0] == pytest.approx(1.2131, abs=1e-4)


def test_equilibrium_stays_put():
    assert integrate_step(scalar(-0.5), state(0.0), 0.0, 3.0).xi[0] == 0.0


def test_nan_aborts():
    with pytest.raises(PlantDivergence):
        integrate_step(scalar(-0.5), state(np.nan), 0.0, 1.0)
    with pytest.raises(ValueError):
        integrate_step(scalar(-0.5), state(1.0), 0.0, 0.0)


@st.composite
def stable_systems(draw):
    n = draw(st.integers(1, 4))
    seed = draw(st.integers(0, 2**31))
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n))
    A -= (np.max(np.linalg.eigvals(A).real) + rng.uniform(0.1, 1.0)) * np.eye(n)
    B = rng.normal(size=(n, n))
    return A, B, rng.normal(size=n), rng.normal(size=n), rng.normal(size=n), rng.uniform(0.1, 3.0)


@settings(max_examples=25, deadline=None)
@given(stable_systems())
def test_matches_fine_step_oracle(sysd):
    A, B, xi, v, w, dt = sysd
    m = SubsystemModel(A, B, np.zeros((B.shape[1], A.shape[0])), ref_levels=np.zeros(len(xi)))
    got = integrate_step(m, PlantState(xi, xi.copy(), v), w, dt).xi
    rhs = lambda t, x: A @ x + B @ v + w
    ref = solve_ivp(rhs, (0.0, dt), xi, method="DOP853", rtol=1e-13, atol=1e-14).y[:, -1]
    assert np.allclose(got, ref, rtol=1e-8, atol=1e-10 * max(1.0, np.abs(ref).max()))


def test_dma_plant_example():
    m = build_dma_plant(3, TankParams(outflow_sensitivity=1e-3, valve_gain=2e-3))
    assert np.allclose(m.A, np.diag([-1e-3] * 3))
    assert np.allclose(m.B, np.diag([2e-3] * 3))
    assert m.is_hurwitz() and np.all(m.closed_loop_eigs().real < 0)


def test_pure_integrator_tank_is_stabilised():
    m = build_dma_plant(4, TankParams(outflow_sensitivity=0.0, valve_gain=2e-3), 0.01)
    assert m.is_hurwitz()
    assert np.allclose(sorted(m.closed_loop_eigs().real), -0.01, rtol=1e-6)


def test_dma_plant_errors():
    with pytest.raises(ModelError):
        build_dma_plant(3, [TankParams(), TankParams(), TankParams(valve_gain=0.0)])
    with pytest.raises(ModelError):
        build_dma_plant(5)
    with pytest.raises(ModelError):
        SubsystemModel([[-1.0]], [[1.0]], [[-1.0]], h=1.0, tau_d=1.0)
    with pytest.raises(ModelError):
        SubsystemModel([[-1.0]], [[1.0]], [[-1.0]], sigma=1.0)


def test_event_check_examples():
    assert not event_check(3.0, 3.0, 0.1)
    assert event_check(3.0, 3.4, 0.1)
    assert event_check(0.0, 0.001, 0.99)


@given(st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10)), min_size=1, max_size=8),
       st.floats(0, 0.99))
def test_event_flags_agree_with_scalar_rule(pairs, sigma):
    xi = np.array([p[0] for p in pairs])
    hat = np.array([p[1] for p in pairs])
    flags = event_flags(xi, hat, sigma)
    assert list(flags) == [event_check(x, y, sigma) for x, y in pairs]
    # a larger sigma never creates new events
    assert not np.any(event_flags(xi, hat, min(sigma + 0.1, 0.99)) & ~flags)


def test_holder_update():
    hat, samp = np.array([1.0, 2.0, 3.0]), np.array([7.0, 8.0, 9.0])
    assert np.array_equal(holder_update(hat, samp, np.zeros(3, bool)), hat)
    assert np.array_equal(holder_update(hat, samp, np.ones(3, bool)), samp)
    assert np.array_equal(holder_update(hat, samp, np.array([True, False, True])), [7, 2, 9])


def test_feedback_and_clamp():
    assert np.array_equal(feedback_input(-np.eye(2), np.zeros(2)), np.zeros(2))
    assert np.array_equal(feedback_input(-np.eye(2), np.array([1.0, -1.0])), [-1.0, 1.0])
    assert clamp_valve(np.array([1.7]))[0] == 1.0
    with pytest.raises(ValueError):
        feedback_input(np.eye(2), np.zeros(3))


def test_demand_profiles():
    assert demand_at(DemandProfile("constant", 100.0), 1234.0) == 100.0
    tri = DemandProfile("trimodal")
    hour = lambda h: demand_at(tri, h * 3600.0)
    assert hour(3) < hour(8)
    grid = [hour(h / 4) for h in range(96)]
    assert max(grid) == pytest.approx(max(hour(h / 4) for h in range(17 * 4, 22 * 4)))
    assert min(grid) == pytest.approx(min(hour(h / 4) for h in range(0, 6 * 4)))
    assert all(0 <= g <= 100 for g in grid)
    fault = DemandProfile("fault", base=DemandProfile("constant", 60.0), leak_rate=20.0,
                          t_start=100.0, t_end=200.0, leak_tank=1)
    assert demand_at(fault, 150.0) == 80.0
    assert demand_at(fault, 250.0) == customer_demand_at(fault, 150.0) == 60.0
    assert list(leak_at(fault, 150.0, 3)) == [0.0, 20.0, 0.0]
    assert not leak_at(fault, 250.0, 3).any()
    with pytest.raises(ValueError):
        demand_at(tri, -1.0)


def test_overshoot():
    assert overshoot_pct([2.0, 3.09, 2.9], 3.0) == pytest.approx(3.0)
    assert overshoot_pct([1.0, 2.9], 3.0) == 0.0
    assert is_critical(overshoot_pct([4.6], 3.0)) and not is_critical(3.0)
    with pytest.raises(ValueError):
        overshoot_pct([], 3.0)
