import pytest

from platoonfluid.model import HighwayParams, State, reset_map
from platoonfluid.policies import (
    Policy,
    admissibility_check,
    effective_alpha,
    headway_delay,
    headway_regulation,
    make_policy,
    min_bottleneck_headway,
    optimality_check,
    recommended_speed,
    size_management,
    size_threshold,
    split_gap,
    split_schedule,
    zero_policy,
)

P = HighwayParams()


def test_zero_policy():
    pol = zero_policy(P)
    assert pol.mu(State(1, 2, 3, 4)) == 0.0
    assert pol.nu(State(1, 2, 3, 4)) == (0.0, 0.0, 0.0)
    assert reset_map(State(), pol.nu(State()), P) == State(0, 0, 0, 2.5)
    assert admissibility_check(pol, P).passed


def test_headway_gate_branches():
    pol = headway_regulation(P)
    alpha = pol.metadata["alpha"]
    assert pol.mu(State()) == 0.0
    assert pol.mu(State(1.3, 0, 0, 5)) == pytest.approx(alpha)
    assert pol.mu(State(2.5, 0, 0, 5)) == 0.0
    assert pol.mu(State(2.5, 0, 0, 0)) == pytest.approx(alpha)
    assert pol.mu(State(1.3, 1, 0, 5)) == 0.0


def test_size_management_gate_branches():
    pol = size_management(P)
    alpha = pol.metadata["alpha"]
    assert pol.mu(State()) == 0.0
    assert pol.mu(State(0.625, 0, 0, 5)) == pytest.approx(alpha)
    _, thr = size_threshold(P)
    assert pol.mu(State(2.5, 0, 0, thr / 2)) == pytest.approx(alpha)


def test_threshold_is_capped_below_buffer():
    literal, used = size_threshold(P)
    assert literal > P.Theta
    assert used == pytest.approx(P.Theta - P.platoon_mass / 2)


def test_alpha_clamp():
    alpha, info = effective_alpha(P)
    lo, hi = info["alpha_band"]
    assert lo <= alpha <= hi
    assert info["alpha_clamped"]


@pytest.mark.parametrize("factory", [zero_policy, headway_regulation, size_management])
def test_admissible(factory):
    rep = admissibility_check(factory(P), P, 1000)
    assert rep.passed, rep.summary()


def test_always_open_gate_fails_with_empty_gate_witness():
    hr = headway_regulation(P)
    alpha = hr.metadata["alpha"]
    bad = Policy("bad", lambda q: alpha, hr.nu)
    rep = admissibility_check(bad, P, 1000)
    assert not rep.passed
    witness = [rep.clauses[k].witness for k in rep.failed()]
    assert any(w is not None and w.q0m == 0.0 for w in witness)


@pytest.mark.parametrize("factory", [headway_regulation, size_management])
def test_optimal_class(factory):
    rep = optimality_check(factory(P), P, 1000)
    assert rep.passed, rep.summary()


def test_zero_policy_is_not_optimal():
    rep = optimality_check(zero_policy(P), P, 1000)
    assert not rep.passed
    assert set(rep.failed()) & {"reset_leaves_link1_empty", "reset_below_buffer", "gate_saturates_bottleneck"}


def test_make_policy():
    assert make_policy("headway", P).id == "headway"
    with pytest.raises(ValueError):
        make_policy("nope", P)


def test_headway_delay():
    pol = headway_regulation(P)
    assert headway_delay(State(), P, pol) == 0.0
    alpha = pol.metadata["alpha"]
    assert headway_delay(State(2.5, 0, 0, 0), P, pol) == pytest.approx(2.5 / alpha, rel=1e-9)


def test_min_headway_in_validation_regime():
    q = P.replace(a=3900.0, rho=2500 / 3900, l=20.0, L1=24.4)
    assert min_bottleneck_headway(q) * 3600 == pytest.approx(36.0, abs=1e-9)


def test_recommended_speed():
    assert recommended_speed(0.0, P) == P.v0
    L = P.L1 + P.L2
    assert recommended_speed(L / P.v0, P) == pytest.approx(P.v0 / 2)
    assert recommended_speed(0.01, P) == pytest.approx(24.4 / (24.4 / 60 + 0.01))
    assert recommended_speed(0.01, P) == pytest.approx(58.56, abs=0.01)
    with pytest.raises(ValueError):
        recommended_speed(-1.0, P)


def test_split_schedule():
    pol = size_management(P)
    s = split_schedule(State(), P, pol)
    assert not s.split and s.v1 == P.v0
    # l / (2 gamma (F - R - (1-eta) rho a)) = 5 / 6000 hr
    assert split_gap(P) * 3600 == pytest.approx(3.0)
    s = split_schedule(State(0, 0, 0, 49), P, pol)
    assert s.split
    assert s.W2 - s.W1 == pytest.approx(split_gap(P))
    assert s.v2 < s.v1 <= P.v0


def test_budget_floor():
    with pytest.raises(ValueError):
        admissibility_check(zero_policy(P), P, 10)
