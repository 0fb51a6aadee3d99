"""Multi-class cell transmission model of the two-link section.

Background traffic is an Eulerian density field with two sub-classes
(through traffic and off-ramp-bound traffic) evolved by the Godunov/CTM
send-receive rule. At the off-ramp cell the mainline has priority by default
(``diverge="priority"``); with ``diverge="fifo"`` the cell discharges in
order, so a held exiting vehicle also holds the through traffic behind it.
Either way, once the link-2 queue reaches the diverge the mainline flow plus
the ramp flow is held to the bottleneck capacity, which is how spillback
blocks the ramp.
Platoons are rigid blocks that occupy whole cells and hop forward one cell
at a time.

A platoon of ``size`` vehicles over ``platoon_length_cells`` cells has
effective density size / (gamma * length). That density counts against the
jam constraint of the cells it holds, background traffic in those cells
moves no faster than the platoon except for a ``passing`` share that keeps
free-flow speed (with passing = 0 a slowed platoon slows the traffic around
and behind it), a platoon never moves faster than the traffic in the
cell ahead, and while it straddles the bottleneck it takes its effective
flow out of the bottleneck capacity first. Every quantity is in miles, hours
and vehicles.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from numba import njit

from .model import HighwayParams, validate_params
from .policies import headway_delay, headway_regulation, recommended_speed, size_management, split_schedule
from .sim import ArrivalStream, sample_arrivals, simulate

ARRIVAL_KIND = 1
SECONDS = 3600.0


class CtmError(ValueError):
    """Raised when a CTM state or parameter set violates an invariant."""


def validation_params(base: Optional[HighwayParams] = None, mainline: float = 2500.0,
                      offramp: float = 1400.0, l: float = 20.0, L1: float = 24.4,
                      L2: float = 0.12) -> HighwayParams:
    """Fluid parameters matching the CTM demand pattern.

    Total demand is mainline + off-ramp, and the platoon size is that of a
    0.1 mi platoon (20 CAVs). With the nominal capacities this puts the
    minimum bottleneck headway at 36 s. The short link 2 lets queues from
    closely spaced platoons reach the diverge.
    """
    base = base or HighwayParams()
    a = mainline + offramp
    p = base.replace(a=a, rho=mainline / a, l=l, L1=L1, L2=L2)
    validate_params(p)
    return p


@dataclass(frozen=True)
class CtmParams:
    """Discretised highway.

    ``capacity`` and ``jam_density`` are per cell; the triangular diagram in
    cell i has critical density capacity[i] / vf and wave speed w. A
    scenario counts as blocked once spillback has throttled the off-ramp for
    ``blockage_window`` hours in a row.
    """

    cell_length: float
    dt: float
    n_cells: int
    offramp_cell: int
    bottleneck_cell: int
    vf: float
    w: float
    capacity: np.ndarray = field(repr=False)
    jam_density: np.ndarray = field(repr=False)
    ramp_capacity: float
    platoon_length_cells: int
    gamma: float
    platoon_size: float
    mainline_demand: float
    offramp_demand: float
    warmup: float
    blockage_window: float
    passing: float
    diverge: str
    fluid: HighwayParams = field(repr=False)

    def __post_init__(self):
        check_ctm(self)

    @property
    def platoon_rate(self) -> float:
        """Platoon arrivals per hour."""
        return self.fluid.eta * self.mainline_demand / self.platoon_size

    @property
    def background_through(self) -> float:
        return (1.0 - self.fluid.eta) * self.mainline_demand

    @property
    def bottleneck_distance(self) -> float:
        return self.bottleneck_cell * self.cell_length

    def critical_density(self) -> np.ndarray:
        return self.capacity / self.vf


def check_ctm(c: CtmParams) -> None:
    if c.cell_length <= 0 or c.dt <= 0:
        raise CtmError("cell_length and dt must be positive")
    if c.dt * c.vf > c.cell_length * (1.0 + 1e-12):
        raise CtmError(f"CFL violated: dt * vf = {c.dt * c.vf!r} exceeds cell_length {c.cell_length!r}")
    if c.w <= 0 or c.w > c.vf:
        raise CtmError("wave speed must lie in (0, vf]")
    if c.platoon_length_cells < 2:
        raise CtmError("a platoon must span at least two cells")
    if not (0 <= c.offramp_cell < c.bottleneck_cell < c.n_cells):
        raise CtmError("need 0 <= offramp_cell < bottleneck_cell < n_cells")
    if c.capacity.shape != (c.n_cells,) or c.jam_density.shape != (c.n_cells,):
        raise CtmError("capacity and jam_density need one entry per cell")
    if np.any(c.capacity <= 0) or np.any(c.jam_density * c.vf <= c.capacity):
        raise CtmError("each cell needs positive capacity below vf * jam density")
    if c.gamma <= 1 or c.platoon_size <= 0:
        raise CtmError("gamma must exceed 1 and platoon size must be positive")
    if not 0.0 <= c.passing <= 1.0:
        raise CtmError("passing share must lie in [0, 1]")
    if c.diverge not in ("fifo", "priority"):
        raise CtmError(f"diverge must be 'fifo' or 'priority', got {c.diverge!r}")
    if c.mainline_demand < 0 or c.offramp_demand < 0:
        raise CtmError("demands must be non-negative")


def build_ctm(p: Optional[HighwayParams] = None, **overrides) -> CtmParams:
    """Calibrate a CTM to fluid parameters ``p``.

    Cells are 0.01 mi, the off-ramp diverges at x = L1, the capacity drops
    from F to F - R at x = L1 + L2, and 0.2 mi of bottleneck road follows.
    Jam densities are F/vf + F/w upstream and (F-R)/vf + (F-R)/w at the
    bottleneck. ``overrides`` replace any CtmParams field (geometry fields
    rebuild the capacity profile unless it is given too).
    """
    p = p or validation_params()
    validate_params(p)
    dx = overrides.pop("cell_length", 0.01)
    vf = overrides.pop("vf", p.v0)
    w = overrides.pop("w", 12.0)
    dt = overrides.pop("dt", None)
    io = overrides.pop("offramp_cell", int(round(p.L1 / dx)) - 1)
    ib = overrides.pop("bottleneck_cell", int(round((p.L1 + p.L2) / dx)))
    if dt is None:
        dt = 0.5 / SECONDS
    n = overrides.pop("n_cells", ib + int(round(0.2 / dx)))
    cap = np.full(n, float(p.F))
    if ib < n:
        cap[ib:] = p.F - p.R
    cap = np.asarray(overrides.pop("capacity", cap), dtype=float)
    kj = np.asarray(overrides.pop("jam_density", cap / vf + cap / w), dtype=float)
    mainline = overrides.pop("mainline_demand", p.rho * p.a)
    offramp = overrides.pop("offramp_demand", (1.0 - p.rho) * p.a)
    kw = dict(
        cell_length=dx, dt=dt, n_cells=n, offramp_cell=io, bottleneck_cell=ib, vf=vf, w=w,
        capacity=cap, jam_density=kj, ramp_capacity=float(p.R), platoon_length_cells=10,
        gamma=p.gamma, platoon_size=p.l, mainline_demand=mainline, offramp_demand=offramp,
        warmup=0.25, blockage_window=10.0 / SECONDS, passing=0.0, diverge="priority", fluid=p,
    )
    unknown = set(overrides) - set(kw)
    if unknown:
        raise CtmError(f"unknown CTM override(s): {sorted(unknown)}")
    kw.update(overrides)
    return CtmParams(**kw)


# ---------------------------------------------------------------- kernel


@njit(cache=True)
def _cover_map(n, tail, ncell, active):
    cover = np.full(n + 1, -1, dtype=np.int64)
    for b in range(tail.shape[0]):
        if active[b] != 1:
            continue
        for i in range(tail[b], tail[b] + ncell[b]):
            if 0 <= i < n:
                cover[i] = b
    return cover


@njit(cache=True)
def _speed(k, vf, w, kj, cap):
    """Prevailing speed of the triangular diagram at density k."""
    if k * vf <= cap:
        return vf
    return max(w * (kj - k) / k, 0.0)


@njit(cache=True)
def _congested(i, bt, bo, cover, speed, vf, cap):
    """A queued platoon holds cell i, or its background is above critical density."""
    if cover[i] >= 0 and speed[cover[i]] < 0.75 * vf:
        return True
    return (bt[i] + bo[i]) * vf > cap[i] * (1.0 + 1e-9)


@njit(cache=True, nogil=True)
def _run(dx, dt, vf, w, cap, kj, io, ib, ramp_cap, dem_t, dem_o, n_steps, warm_steps,
         entry, nveh, ncell, vrec, gamma, record_every, window_steps, bt0, bo0, strict, passing,
         fifo):
    """Integrate the CTM; see ``run_scenario`` for the meaning of the outputs."""
    n = cap.shape[0]
    nb = entry.shape[0]
    bt = bt0.copy()
    bo = bo0.copy()
    tail = np.zeros(nb, dtype=np.int64)
    prog = np.zeros(nb)
    speed = np.zeros(nb)
    active = np.zeros(nb, dtype=np.int64)  # 0 waiting, 1 on road, 2 gone
    pdens = nveh / (gamma * ncell * dx)
    et = 0.0
    eo = 0.0
    n_rec = n_steps // record_every + 1 if record_every > 0 else 0
    rec = np.zeros((n_rec, n))
    ri = 0
    vht = 0.0
    cong_steps = 0
    run_len = 0
    blocked = False
    first_block = -1.0
    in_bg = 0.0
    out_ramp = 0.0
    out_sink = 0.0
    out_plat = 0.0
    next_block = 0
    send = np.zeros(n)
    recv = np.zeros(n)
    flux = np.zeros(n + 1)
    fluxo = np.zeros(n + 1)
    for step in range(n_steps):
        t = step * dt
        # a waiting platoon enters once the previous one is fully on the road
        if next_block < nb and entry[next_block] <= t:
            if next_block == 0 or active[next_block - 1] != 1 or tail[next_block - 1] >= 0:
                active[next_block] = 1
                tail[next_block] = -ncell[next_block]
                prog[next_block] = 0.0
                next_block += 1
        cover = _cover_map(n, tail, ncell, active)
        # platoon speeds, downstream first
        bneck_used = 0.0
        pflux_link2 = 0.0
        for b in range(nb):
            if active[b] != 1:
                continue
            head = tail[b] + ncell[b] - 1
            v = vrec[b] if head < ib else vf
            if tail[b] < ib <= head:
                v = min(v, cap[ib] / pdens[b])
            nxt = head + 1
            if nxt < n:
                if cover[nxt] >= 0:
                    v = min(v, speed[cover[nxt]])
                else:
                    v = min(v, _speed(bt[nxt] + bo[nxt], vf, w, kj[nxt], cap[nxt]))
            speed[b] = v
            if tail[b] < ib <= head:
                bneck_used = pdens[b] * v
            if tail[b] <= io < head:
                pflux_link2 = pdens[b] * v
        # background send / receive; background sharing a platoon's cells
        # keeps to the platoon's speed except for the passing share
        for i in range(n):
            k = bt[i] + bo[i]
            v = vf
            pe = 0.0
            if cover[i] >= 0:
                vp = min(vf, speed[cover[i]])
                v = vp + passing * (vf - vp)
                pe = pdens[cover[i]]
            send[i] = min(v * k, cap[i])
            recv[i] = max(min(cap[i], w * (kj[i] - k - pe)), 0.0)
        recv[ib] = min(recv[ib], max(cap[ib] - bneck_used, 0.0))
        et += dem_t * dt
        eo += dem_o * dt
        # boundary fluxes (veh/hr); flux[i] enters cell i, flux[n] leaves the road
        e = et + eo
        y0 = min(e / dt, recv[0])
        flux[0] = y0
        fluxo[0] = y0 * (eo / e) if e > 0 else 0.0
        ramp = 0.0
        blocked_now = False
        for i in range(n):
            k = bt[i] + bo[i]
            frac = bo[i] / k if k > 0 else 0.0
            down = recv[i + 1] if i + 1 < n else 1e300
            if i == io:
                # once the link-2 queue reaches the diverge, the flow into
                # link 2 plus the ramp flow is held to the bottleneck capacity
                sm = (1.0 - frac) * send[i]
                so = frac * send[i]
                spill = _congested(io + 1, bt, bo, cover, speed, vf, cap)
                room = max(cap[ib] - pflux_link2, 0.0)
                if fifo:
                    # vehicles leave in order: a held exiting vehicle holds
                    # back the through traffic behind it
                    y = send[i]
                    if frac < 1.0:
                        y = min(y, down / (1.0 - frac))
                    if frac > 0.0:
                        y = min(y, ramp_cap / frac)
                    if spill:
                        y = min(y, room)
                    fm = (1.0 - frac) * y
                    ramp = frac * y
                else:
                    fm = min(sm, down)
                    ramp = min(so, ramp_cap)
                    if spill:
                        ramp = min(ramp, max(room - fm, 0.0))
                if spill:
                    blocked_now = ramp < min(so, ramp_cap) * (1.0 - 1e-9)
                flux[i + 1] = fm
                fluxo[i + 1] = 0.0
            else:
                y = min(send[i], down)
                flux[i + 1] = y
                fluxo[i + 1] = frac * y
        bad = -1
        for i in range(n):
            out_o = fluxo[i + 1] + (ramp if i == io else 0.0)
            out_t = flux[i + 1] - fluxo[i + 1]
            bo[i] += (fluxo[i] - out_o) * dt / dx
            bt[i] += ((flux[i] - fluxo[i]) - out_t) * dt / dx
            if bo[i] < 0.0:
                if bo[i] < -1e-9:
                    bad = i
                bo[i] = 0.0
            if bt[i] < 0.0:
                if bt[i] < -1e-9:
                    bad = i
                bt[i] = 0.0
            pe = pdens[cover[i]] if cover[i] >= 0 else 0.0
            if bt[i] + bo[i] + pe > kj[i] * (1.0 + 1e-9):
                bad = i
        if strict and bad >= 0:
            return vht, rec, -(bad + 1.0), first_block, cong_steps, in_bg, out_ramp, out_sink, out_plat, et + eo
        in_bg += flux[0] * dt
        out_ramp += ramp * dt
        out_sink += flux[n] * dt
        et = max(et - (flux[0] - fluxo[0]) * dt, 0.0)
        eo = max(eo - fluxo[0] * dt, 0.0)
        # platoon moves: at most one cell per step, never into a held or full cell
        for b in range(nb):
            if active[b] != 1:
                continue
            prog[b] += speed[b] * dt
            if prog[b] < dx * (1.0 - 1e-12):
                continue
            nxt = tail[b] + ncell[b]
            if nxt < n and (cover[nxt] >= 0 or bt[nxt] + bo[nxt] + pdens[b] > kj[nxt]):
                prog[b] = dx
                continue
            prog[b] -= dx
            if 0 <= tail[b] < n:
                cover[tail[b]] = -1
            tail[b] += 1
            if nxt < n:
                cover[nxt] = b
            if tail[b] >= n:
                active[b] = 2
                out_plat += nveh[b]
        if step >= warm_steps:
            inside = et + eo
            for i in range(n):
                inside += (bt[i] + bo[i]) * dx
            for b in range(nb):
                if active[b] == 1 or (active[b] == 0 and entry[b] <= t):
                    inside += nveh[b]
            vht += inside * dt
            if blocked_now:
                cong_steps += 1
                run_len += 1
                if run_len >= window_steps and not blocked:
                    blocked = True
                    first_block = (step + 1) * dt
            else:
                run_len = 0
        if record_every > 0 and step % record_every == 0:
            for i in range(n):
                rec[ri, i] = bt[i] + bo[i]
                if cover[i] >= 0:
                    rec[ri, i] += pdens[cover[i]]
            ri += 1
    storage = et + eo
    for i in range(n):
        storage += (bt[i] + bo[i]) * dx
    return vht, rec[:ri], 1.0 if blocked else 0.0, first_block, cong_steps, in_bg, out_ramp, out_sink, out_plat, storage


# ---------------------------------------------------------------- scenarios


@dataclass(frozen=True)
class Strategy:
    """How arriving platoons are coordinated.

    kind is "none", "fixed-headway" (bottleneck arrivals at least
    ``headway_s`` seconds apart), "headway-policy" or "split-policy" (the
    fluid policies run on the same arrivals to produce delays and splits).
    """

    kind: str = "none"
    headway_s: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "fixed-headway", "headway-policy", "split-policy"):
            raise ValueError(f"unknown strategy {self.kind!r}")
        if self.headway_s < 0:
            raise ValueError("headway must be non-negative")

    @classmethod
    def parse(cls, s: Union[str, "Strategy"]) -> "Strategy":
        if isinstance(s, Strategy):
            return s
        if s.startswith("fixed-headway"):
            _, _, arg = s.partition(":")
            return cls("fixed-headway", float(arg or 0.0))
        return cls(s)


def fixed_headway(W_s: float) -> Strategy:
    return Strategy("fixed-headway", float(W_s))


@dataclass
class Blocks:
    """Platoon blocks in entry order."""

    entry: np.ndarray
    size: np.ndarray
    cells: np.ndarray
    speed: np.ndarray


def _blocks(c: CtmParams, strategy: Strategy, arrivals: np.ndarray, horizon: float) -> Blocks:
    p = c.fluid
    v0 = c.vf
    n = arrivals.size
    L = p.L1 + p.L2
    size = np.full(n, c.platoon_size)
    cells = np.full(n, c.platoon_length_cells, dtype=np.int64)
    if strategy.kind == "none":
        return Blocks(arrivals.copy(), size, cells, np.full(n, v0))
    if strategy.kind == "fixed-headway":
        W = strategy.headway_s / SECONDS
        free = arrivals + L / v0
        sched = np.empty(n)
        last = -math.inf
        for i in range(n):
            sched[i] = max(free[i], last + W)
            last = sched[i]
        delays = sched - free
        return Blocks(arrivals.copy(), size, cells, np.array([recommended_speed(d, p) for d in delays]))
    stream = ArrivalStream(0, p.lam, horizon)
    if strategy.kind == "headway-policy":
        pol = headway_regulation(p)
        traj = simulate(p, pol, stream, arrivals=arrivals)
        before = traj.before[traj.kinds == ARRIVAL_KIND]
        speeds = [recommended_speed(headway_delay(_state(q), p, pol), p) for q in before]
        return Blocks(arrivals.copy(), size, cells, np.array(speeds))
    pol = size_management(p)
    traj = simulate(p, pol, stream, arrivals=arrivals)
    before = traj.before[traj.kinds == ARRIVAL_KIND]
    e, s, k, v = [], [], [], []
    half = max(c.platoon_length_cells // 2, 2)
    for t, q in zip(arrivals, before):
        sch = split_schedule(_state(q), p, pol)
        if sch.split:
            e += [t, t]
            s += [c.platoon_size / 2.0] * 2
            k += [half, half]
            v += [sch.v1, sch.v2]
        else:
            e.append(t)
            s.append(c.platoon_size)
            k.append(c.platoon_length_cells)
            v.append(v0)
    return Blocks(np.array(e), np.array(s), np.array(k, dtype=np.int64), np.array(v))


def _state(q):
    from .model import State

    return State(*map(float, q))


@dataclass
class ScenarioResult:
    strategy: Strategy
    seed: int
    vht: float
    blocked: bool
    first_blockage: Optional[float]
    congested_time: float
    n_platoons: int
    density: Optional[np.ndarray] = field(default=None, repr=False)
    record_dt: float = 0.0
    background_in: float = 0.0
    background_out: float = 0.0
    platoons_out: float = 0.0
    storage: float = 0.0
    conservation_residual: float = 0.0

    def density_csv(self, path) -> None:
        """Rows are recorded time steps, columns are cells (veh/mi, effective)."""
        if self.density is None:
            raise ValueError("scenario was run without recording the density field")
        with open(path, "w") as fh:
            fh.write("t," + ",".join(f"c{i}" for i in range(self.density.shape[1])) + "\n")
            for r, row in enumerate(self.density):
                fh.write(repr(r * self.record_dt) + "," + ",".join(repr(float(x)) for x in row) + "\n")


def _initial(c: CtmParams, fill: bool):
    n = c.n_cells
    bt = np.zeros(n)
    bo = np.zeros(n)
    if fill:
        bt[:] = c.background_through / c.vf
        bo[: c.offramp_cell + 1] = c.offramp_demand / c.vf
    return bt, bo


def run_scenario(c: CtmParams, strategy: Union[str, Strategy] = "none", seed: int = 0,
                 horizon: float = 2.25, record_every: int = 0, arrivals: Optional[np.ndarray] = None,
                 prefill: bool = True, strict: bool = True) -> ScenarioResult:
    """Simulate ``horizon`` hours and measure VHT after the warm-up.

    Platoon arrivals are Poisson with rate eta * mainline / size, drawn from
    the seeded stream (common to every strategy for a given seed) unless
    given explicitly. ``prefill`` starts the road at the free-flow
    background density. ``record_every`` > 0 keeps the density field every
    that many steps.
    """
    strategy = Strategy.parse(strategy)
    if horizon <= c.warmup:
        raise ValueError("horizon must exceed the warm-up")
    if arrivals is None:
        arrivals = sample_arrivals(ArrivalStream(seed, c.platoon_rate, horizon, substream=7))
    arrivals = np.asarray(arrivals, dtype=float)
    blocks = _blocks(c, strategy, arrivals, horizon)
    n_steps = int(round(horizon / c.dt))
    warm = int(round(c.warmup / c.dt))
    window = max(int(round(c.blockage_window / c.dt)), 1)
    bt, bo = _initial(c, prefill)
    stored0 = float((bt + bo).sum() * c.cell_length)
    out = _run(c.cell_length, c.dt, c.vf, c.w, c.capacity, c.jam_density, c.offramp_cell,
               c.bottleneck_cell, c.ramp_capacity, c.background_through, c.offramp_demand,
               n_steps, warm, blocks.entry, blocks.size, blocks.cells, blocks.speed, c.gamma,
               record_every, window, bt, bo, strict, c.passing,
               c.diverge == "fifo")
    vht, rec, flag, first, cong, inflow, ramp, sink, plat, storage = out
    if flag < 0:
        raise CtmError(f"density invariant violated in cell {int(-flag) - 1}")
    demand_in = (c.background_through + c.offramp_demand) * n_steps * c.dt
    residual = (stored0 + demand_in) - (ramp + sink + storage)
    return ScenarioResult(
        strategy, seed, float(vht), bool(flag > 0), float(first) if first >= 0 else None,
        float(cong * c.dt), int(arrivals.size), rec if record_every > 0 else None,
        record_every * c.dt, float(inflow), float(ramp + sink), float(plat), float(storage), float(residual),
    )


@dataclass
class SweepResult:
    headways: list
    vht: list
    stderr: list
    baseline_vht: float
    seeds: list
    blocked_none: list = field(default_factory=list)
    blocked_by_headway: dict = field(default_factory=dict)

    @property
    def best_headway(self) -> float:
        return float(self.headways[int(np.argmin(self.vht))])

    def improvement_ratio_at(self, W: float) -> float:
        """Share of the best attainable VHT improvement that headway W attains."""
        i = int(np.argmin(np.abs(np.asarray(self.headways, dtype=float) - W)))
        if not math.isclose(self.headways[i], W, abs_tol=1e-9):
            raise ValueError(f"headway {W!r} is not on the sweep grid")
        best = min(self.vht)
        if self.vht[i] == best:
            return 1.0
        gain = self.baseline_vht - best
        if gain <= 0:
            return 0.0
        return (self.baseline_vht - self.vht[i]) / gain

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("headway_s,mean_vht,stderr_vht\n")
            for h, v, s in zip(self.headways, self.vht, self.stderr):
                fh.write(f"{h!r},{v!r},{s!r}\n")


def headway_sweep(c: CtmParams, headways: Sequence[float] = (0, 10, 20, 30, 36, 45, 60),
                  seeds: Sequence[int] = tuple(range(20)), horizon: float = 2.25,
                  workers: int = 1) -> SweepResult:
    """Mean VHT over ``seeds`` for fixed minimum bottleneck headways (s)."""
    headways = [float(h) for h in headways]
    seeds = list(seeds)
    jobs = [(None, s) for s in seeds] + [(h, s) for h in headways for s in seeds]

    def one(job):
        h, s = job
        strat = Strategy() if h is None else fixed_headway(h)
        return run_scenario(c, strat, s, horizon)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            res = list(ex.map(one, jobs))
    else:
        res = [one(j) for j in jobs]
    base = res[: len(seeds)]
    means, errs, blocked = [], [], {}
    for j, h in enumerate(headways):
        chunk = res[len(seeds) * (j + 1): len(seeds) * (j + 2)]
        v = np.array([r.vht for r in chunk])
        means.append(float(v.mean()))
        errs.append(float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0)
        blocked[h] = [r.blocked for r in chunk]
    return SweepResult(headways, means, errs, float(np.mean([r.vht for r in base])), seeds,
                       [r.blocked for r in base], blocked)
