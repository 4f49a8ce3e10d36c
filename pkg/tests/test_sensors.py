import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from atfg.dynamics import SimState
from atfg.sensors import OBS_SIZE, Observation, StackedState, observe, push

finite = st.floats(-1e3, 1e3, allow_nan=False)
obs_strategy = st.builds(
    Observation,
    st.tuples(finite, finite, finite),
    st.tuples(*[st.floats(0, 1e3)] * 4),
)


def obs(v):
    return Observation((v, v + 1, v + 2), (v + 3, v + 4, v + 5, v + 6))


def test_error_zero_on_setpoint():
    sim = SimState(omega_body=(1.0, -2.0, 0.5))
    assert observe(sim, (1.0, -2.0, 0.5)).error == (0.0, 0.0, 0.0)


def test_error_at_rate_bound():
    assert observe(SimState(), (5.24, 0, 0)).error == (5.24, 0.0, 0.0)


def test_error_componentwise():
    sim = SimState(omega_body=(0.5, -1.0, 1.0), rotor_omega=(1.0, 2.0, 3.0, 4.0))
    o = observe(sim, (1, -2, 3))
    assert o.error == (0.5, -1.0, 2.0)
    assert o.rotor_omega == (1.0, 2.0, 3.0, 4.0)
    assert len(o.as_tuple()) == OBS_SIZE


def test_memory_one_is_the_observation():
    a = obs(1.0)
    s = push(StackedState.empty(1), a)
    assert np.array_equal(s.flat, np.array(a.as_tuple()))


def test_fifo_order():
    a, b = obs(1.0), obs(10.0)
    s = push(push(StackedState.empty(2), a), b)
    assert np.array_equal(s.flat, np.array(a.as_tuple() + b.as_tuple()))


def test_capacity_three_drops_oldest():
    a, b, c, d = (obs(v) for v in (1.0, 10.0, 20.0, 30.0))
    s = StackedState.empty(3)
    for o in (a, b, c, d):
        s = push(s, o)
    assert np.array_equal(s.flat, np.array(b.as_tuple() + c.as_tuple() + d.as_tuple()))
    assert s.newest == d


def test_cold_start_is_zero_filled():
    s = push(StackedState.empty(3), obs(1.0))
    assert np.all(s.flat[: 2 * OBS_SIZE] == 0.0)


def test_memory_must_be_positive():
    with pytest.raises(ValueError):
        StackedState.empty(0)


@given(st.integers(1, 3), st.lists(obs_strategy, max_size=6))
def test_flat_length(m, observations):
    s = StackedState.empty(m)
    for o in observations:
        s = push(s, o)
    assert s.flat.shape == (m * OBS_SIZE,)


@given(st.integers(1, 4), obs_strategy)
def test_identical_pushes_fill_every_slot(m, o):
    s = StackedState.empty(m)
    for _ in range(m):
        s = push(s, o)
    assert all(slot == o for slot in s.buffer)
