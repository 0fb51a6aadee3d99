import math

import numpy as np
import pytest

from platoonfluid.model import (
    HighwayParams,
    ParameterError,
    State,
    StateError,
    compute_flows,
    nominal_throughput,
    reset_map,
    uncontrolled_reset,
    validate_params,
    validate_state,
    vector_field,
)

P = HighwayParams()


def test_defaults_are_valid():
    assert validate_params(P) is P
    assert (P.F, P.R, P.eta, P.gamma, P.l, P.rho, P.Theta, P.a) == (4500, 1500, 0.2, 2, 5, 0.75, 50, 2500)


@pytest.mark.parametrize("change, message", [
    (dict(gamma=1.0), "gamma must exceed 1"),
    (dict(F=1000.0, R=1500.0), "F must exceed R"),
    (dict(eta=1.2), "eta must lie in [0, 1]"),
    (dict(Theta=0.0), "Theta must be positive"),
    (dict(a=math.nan), "a must be finite"),
])
def test_invalid_params(change, message):
    with pytest.raises(ParameterError, match=message.replace("[", r"\[").replace("]", r"\]")):
        validate_params(P.replace(**change))


def test_flows_empty_zero_demand():
    f = compute_flows(State(), 0.0, P.replace(a=0.0))
    assert tuple(f) == (0.0, 0.0, 0.0, 0.0)


def test_flows_free_flow():
    f = compute_flows(State(), 0.0, P)
    assert (f.f1, f.f2, f.r) == pytest.approx((1500.0, 1500.0, 625.0))


def test_flows_spillback_blocks_offramp():
    f = compute_flows(State(0, 10, 5, 50), 0.0, P)
    assert (f.f1, f.f2, f.r) == (3000.0, 3000.0, 0.0)


def test_field_cases():
    assert np.all(vector_field(State(), 0.0, P.replace(a=0.0)) == 0)
    g = vector_field(State(0, 0, 0, 20), 0.0, P)
    assert g == pytest.approx([0.0, 0.0, 0.0, -1500.0])
    g = vector_field(State(0, 10, 5, 50), 0.0, P)
    assert g[2] == pytest.approx(625.0)


def test_printed_form_differs_only_in_link1():
    q = State(0, 10, 5, 50)
    a = vector_field(q, 0.0, P)
    b = vector_field(q, 0.0, P, form="printed")
    assert a[[0, 2, 3]].tolist() == b[[0, 2, 3]].tolist()
    with pytest.raises(ValueError):
        vector_field(q, 0.0, P, form="other")


def test_state_validation():
    with pytest.raises(StateError):
        validate_state(State(-1, 0, 0, 0), P)
    with pytest.raises(StateError):
        validate_state(State(0, 0, 0, 51), P)
    with pytest.raises(StateError):
        compute_flows(State(), -1.0, P)


def test_reset_examples():
    assert reset_map(State(), (0, 0, 0), P) == State(0, 0, 0, 2.5)
    assert reset_map(State(0, 0, 0, 49), (0, 0, 0), P) == State(0, 1.5, 0, 50)
    assert reset_map(State(0, 0, 0, 10), (2.5, 0, -2.5), P) == State(2.5, 0, 0, 10)


def test_reset_rejects_bad_allocation():
    with pytest.raises(StateError):
        reset_map(State(), (1.0, 0, 0), P)
    with pytest.raises(StateError):
        reset_map(State(), (3.0, 0, -3.0), P)


def test_uncontrolled_reset_conserves_mass():
    q = State(1, 2, 3, 49)
    s = uncontrolled_reset(q, P)
    assert math.isclose(s.total - q.total, P.platoon_mass)


def test_nominal_throughput():
    assert nominal_throughput(P) == pytest.approx(4444.44, abs=0.01)
    q = P.replace(eta=0.0, rho=0.5, F=3000.0, R=1500.0)
    assert nominal_throughput(q) == pytest.approx(3000.0)
    q = P.replace(rho=1.0)
    assert nominal_throughput(q) == pytest.approx(3000.0 / (0.1 + 0.8))
