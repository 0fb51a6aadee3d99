import numpy as np
import pytest

from platoonfluid.ctm import (
    CtmError,
    Strategy,
    build_ctm,
    headway_sweep,
    run_scenario,
    validation_params,
)
from platoonfluid.model import HighwayParams
from platoonfluid.policies import min_bottleneck_headway
from platoonfluid.sim import ArrivalStream, sample_arrivals


@pytest.fixture(scope="module")
def ctm():
    return build_ctm()


def test_validation_regime():
    p = validation_params()
    assert p.a == 3900.0 and p.rho * p.a == pytest.approx(2500.0)
    assert min_bottleneck_headway(p) * 3600 == pytest.approx(36.0)


def test_geometry(ctm):
    assert ctm.capacity[ctm.bottleneck_cell] == 3000.0
    assert ctm.capacity[ctm.offramp_cell] == 4500.0
    assert ctm.offramp_cell < ctm.bottleneck_cell < ctm.n_cells


def test_rejections():
    with pytest.raises(CtmError, match="CFL"):
        build_ctm(dt=1.0 / 3600)
    with pytest.raises(CtmError):
        build_ctm(platoon_length_cells=1)
    with pytest.raises(CtmError):
        build_ctm(passing=2.0)
    with pytest.raises(CtmError):
        build_ctm(nonsense=1)


def test_strategy_parse():
    assert Strategy.parse("fixed-headway:30") == Strategy("fixed-headway", 30.0)
    with pytest.raises(ValueError):
        Strategy.parse("teleport")
    with pytest.raises(ValueError):
        Strategy("fixed-headway", -1.0)


def test_empty_network_stays_empty():
    c = build_ctm(mainline_demand=0.0, offramp_demand=0.0)
    r = run_scenario(c, "none", 0, 0.5, arrivals=np.array([]), prefill=False)
    assert r.vht == 0.0 and r.storage == 0.0 and r.background_out == 0.0


def test_subcritical_background_passes(ctm):
    r = run_scenario(ctm, "none", 0, 1.0, arrivals=np.array([]))
    assert r.background_out == pytest.approx(r.background_in, rel=1e-9)
    assert r.congested_time == 0.0 and not r.blocked


def test_single_class_bottleneck_queue_growth():
    p = validation_params(HighwayParams().replace(eta=0.0), mainline=3500.0, offramp=1e-4)
    c = build_ctm(p)
    none = np.array([])
    s1 = run_scenario(c, "none", 0, 1.0, arrivals=none).storage
    s2 = run_scenario(c, "none", 0, 1.5, arrivals=none).storage
    assert (s2 - s1) / 0.5 == pytest.approx(3500.0 - 3000.0, rel=1e-3)


def test_conservation(ctm):
    r = run_scenario(ctm, "none", 3, 1.0)
    total = r.background_in + r.storage
    assert abs(r.conservation_residual) <= 1e-9 * total


def test_platoon_burst_reaches_offramp(ctm):
    arr = 0.5 + np.arange(8) * 2.0 / 3600
    r = run_scenario(ctm, "none", 0, 1.0, arrivals=arr)
    assert r.congested_time > 0


def test_zero_headway_is_uncoordinated(ctm):
    a = run_scenario(ctm, "none", 1, 1.0)
    b = run_scenario(ctm, "fixed-headway:0", 1, 1.0)
    assert a.vht == pytest.approx(b.vht, rel=1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_more_platoons_more_vht(ctm, seed):
    own = sample_arrivals(ArrivalStream(seed, ctm.platoon_rate, 1.0, substream=7))
    extra = sample_arrivals(ArrivalStream(seed, 10.0, 1.0, substream=8))
    base = run_scenario(ctm, "none", seed, 1.0, arrivals=own)
    more = run_scenario(ctm, "none", seed, 1.0, arrivals=np.sort(np.concatenate([own, extra])))
    assert more.vht >= base.vht


def test_policy_strategies_run(ctm):
    for s in ("headway-policy", "split-policy"):
        r = run_scenario(ctm, s, 0, 0.6)
        assert np.isfinite(r.vht) and r.vht > 0


def test_density_record(ctm, tmp_path):
    r = run_scenario(ctm, "none", 0, 0.3, record_every=600)
    assert r.density.shape[1] == ctm.n_cells
    r.density_csv(tmp_path / "d.csv")
    head = (tmp_path / "d.csv").read_text().splitlines()[0]
    assert head.startswith("t,c0,")


def test_single_point_sweep(ctm, tmp_path):
    sw = headway_sweep(ctm, [30.0], [0], horizon=0.6)
    assert len(sw.vht) == 1 and sw.improvement_ratio_at(30.0) == 1.0
    with pytest.raises(ValueError):
        sw.improvement_ratio_at(36.0)
    sw.to_csv(tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().startswith("headway_s,mean_vht,stderr_vht\n")


def test_fifo_diverge_conserves_and_differs_only_under_spillback():
    fifo = build_ctm(diverge="fifo")
    prio = build_ctm()
    quiet = np.array([0.5])
    a = run_scenario(fifo, "none", 0, 1.0, arrivals=quiet)
    b = run_scenario(prio, "none", 0, 1.0, arrivals=quiet)
    assert a.vht == pytest.approx(b.vht, rel=1e-9)
    r = run_scenario(fifo, "none", 4, 1.0)
    assert abs(r.conservation_residual) <= 1e-9 * (r.background_in + r.storage)
    with pytest.raises(CtmError):
        build_ctm(diverge="zipper")


def test_coordinated_vht_lower_at_30s(ctm):
    seeds = range(20)
    none = np.mean([run_scenario(ctm, "none", s).vht for s in seeds])
    coord = np.mean([run_scenario(ctm, "fixed-headway:30", s).vht for s in seeds])
    assert coord < none


def test_two_hour_scenario_runtime(ctm):
    import time

    t0 = time.perf_counter()
    run_scenario(ctm, "fixed-headway:36", 0, 2.0)
    assert time.perf_counter() - t0 < 60.0
