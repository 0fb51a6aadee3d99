import numpy as np
import pytest

from platoonfluid.model import HighwayParams, State
from platoonfluid.policies import Policy, headway_regulation, zero_policy
from platoonfluid.queueing import mean_total_queue
from platoonfluid.sim import (
    ArrivalStream,
    Trajectory,
    advance,
    coupled_simulate,
    divergence_test,
    dominance_gap,
    mass_balance_residual,
    metrics,
    sample_arrivals,
    simulate,
)

P = HighwayParams()


def test_arrivals():
    assert sample_arrivals(ArrivalStream(0, 0.0, 10.0)).size == 0
    t = sample_arrivals(ArrivalStream(42, 75.0, 1000.0))
    assert np.diff(t).mean() == pytest.approx(1 / 75, rel=0.01)
    pooled = [sample_arrivals(ArrivalStream(s, 75.0, 1000.0)).size for s in range(8)]
    assert np.mean(pooled) == pytest.approx(75000, rel=0.005)
    assert np.all(np.diff(t) > 0) and t[-1] < 1000.0
    a = sample_arrivals(ArrivalStream(42, 75.0, 10.0))
    b = sample_arrivals(ArrivalStream(42, 75.0, 10.0))
    assert np.array_equal(a, b)
    c = sample_arrivals(ArrivalStream(42, 75.0, 10.0, substream=1))
    assert not np.array_equal(a[:5], c[:5])


def test_zero_state_is_stationary():
    q, events = advance(State(), zero_policy(P), P, 5.0)
    assert q == State()


def test_link2_drain():
    q, events = advance(State(0, 0, 0, 10), zero_policy(P), P, 1.0)
    assert q == State()
    assert events[0][0] == pytest.approx(10 / 1500)


def test_gate_switch_event():
    pol = headway_regulation(P)
    tr = simulate(P, pol, ArrivalStream(0, 0.0, 0.1), q0=State(5, 0, 0, 0))
    kinds = [k for _, k, _, _ in tr.events()]
    assert "policy-switch" in kinds
    alpha = pol.metadata["alpha"]
    t_first = next(t for t, k, _, _ in tr.events() if k == "policy-switch")
    assert t_first == pytest.approx(2.5 / alpha)


def test_no_arrivals_stays_empty():
    tr = simulate(P.replace(eta=0.0), zero_policy(P), ArrivalStream(0, 0.0, 3.0))
    assert np.all(tr.after == 0) and tr.horizon == 3.0


@pytest.mark.parametrize("engine", ["kernel", "python"])
def test_engines_agree(engine):
    s = ArrivalStream(5, P.lam, 5.0)
    ref = simulate(P, headway_regulation(P), s, engine="kernel")
    tr = simulate(P, headway_regulation(P), s, engine=engine)
    assert metrics(tr).time_avg_total_queue == pytest.approx(metrics(ref).time_avg_total_queue, rel=1e-9)


def test_user_policy_runs_on_python_engine():
    hr = headway_regulation(P)
    user = Policy("user", hr.mu, hr.nu)
    s = ArrivalStream(2, P.lam, 2.0)
    a = metrics(simulate(P, user, s)).time_avg_total_queue
    b = metrics(simulate(P, hr, s)).time_avg_total_queue
    assert a == pytest.approx(b, rel=1e-6)
    with pytest.raises(ValueError):
        simulate(P, user, s, engine="kernel")


def test_determinism_bytes():
    s = ArrivalStream(9, P.lam, 20.0)
    assert simulate(P, zero_policy(P), s).to_csv() == simulate(P, zero_policy(P), s).to_csv()


def test_time_average_near_md1():
    tr = simulate(P, zero_policy(P), ArrivalStream(0, P.lam, 1000.0))
    avg = metrics(tr).time_avg_total_queue
    # time-average content: half a platoon per platoon in service plus the waiting ones
    u = P.lam / 600.0
    expected = P.platoon_mass * (u / 2 + u * u / (2 * (1 - u)))
    assert avg == pytest.approx(expected, rel=0.10)


def test_triangle_metrics():
    t = np.array([0.0, 1.0, 2.0])
    after = np.array([[0, 0, 0, 0], [0, 0, 0, 5], [0, 0, 0, 0]], dtype=float)
    tr = Trajectory(t, np.array([0, 2, 4]), after.copy(), after, P, "x")
    assert metrics(tr).time_avg_total_queue == pytest.approx(2.5)
    z = Trajectory(t, np.array([0, 2, 4]), np.zeros((3, 4)), np.zeros((3, 4)), P, "x")
    m = metrics(z)
    assert m.time_avg_total_queue == 0 and m.spillback_fraction == 0 and m.max_total_queue == 0


def test_coupled_same_policy_identical():
    s = ArrivalStream(1, P.lam, 20.0)
    a, b = coupled_simulate(P, zero_policy(P), zero_policy(P), s)
    assert np.array_equal(a.after, b.after)


def test_dominance():
    s = ArrivalStream(3, P.lam, 50.0)
    a, b = coupled_simulate(P, headway_regulation(P), zero_policy(P), s)
    assert dominance_gap(a, b) <= 1e-9


def test_supercritical_diverges():
    q = P.replace(a=4800.0)
    s = ArrivalStream(0, q.lam, 200.0)
    for pol in (zero_policy(q), headway_regulation(q)):
        d = divergence_test(simulate(q, pol, s))
        assert d.slope > 0 and d.diverges


def test_mass_balance():
    pol = headway_regulation(P)
    tr = simulate(P, pol, ArrivalStream(4, P.lam, 20.0))
    assert mass_balance_residual(tr, pol) < 1e-9


def test_headway_queue_matches_closed_form_roughly():
    pol = headway_regulation(P)
    tr = simulate(P, pol, ArrivalStream(0, P.lam, 500.0))
    assert metrics(tr).time_avg_total_queue == pytest.approx(mean_total_queue(P), rel=0.1)
