"""Exact simulation of the piecewise-deterministic queueing process.

Between platoon arrivals the vector field is constant on polyhedral regions,
so each path is piecewise linear. Both engines step from one region boundary
(or policy switching surface) to the next in closed form. The compiled engine
handles the built-in policies; the Python engine handles any Policy.

Random numbers come from numpy's counter-based Philox generator. Replication
``i`` of base seed ``s`` uses ``SeedSequence(s, spawn_key=(i,))``, so
replications are independent and individually reproducible.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernel
from .model import (
    TOL,
    HighwayParams,
    State,
    StateError,
    field_components,
    reset_map,
    validate_params,
    validate_state,
)
from .policies import Lattice, Level, Policy

KIND_NAMES = ("start", "arrival", "boundary-crossing", "policy-switch", "horizon-end")
MAX_CROSSINGS = 1_000_000


class ChatteringError(RuntimeError):
    """Too many surface crossings between two platoon arrivals."""


# ---------------------------------------------------------------------------
# arrivals


@dataclass(frozen=True)
class ArrivalStream:
    seed: int
    rate: float
    horizon: float
    substream: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.substream,))
        return np.random.Generator(np.random.Philox(ss))


def sample_arrivals(stream: ArrivalStream) -> np.ndarray:
    """Poisson arrival epochs in (0, horizon), strictly increasing."""
    if stream.rate < 0:
        raise ValueError("rate must be non-negative")
    if stream.horizon <= 0:
        raise ValueError("horizon must be positive")
    if stream.rate == 0:
        return np.empty(0)
    rng = stream.generator()
    mean = stream.rate * stream.horizon
    chunk = int(mean + 10.0 * math.sqrt(mean) + 16)
    times = np.cumsum(rng.exponential(1.0 / stream.rate, chunk))
    while times[-1] < stream.horizon:
        more = times[-1] + np.cumsum(rng.exponential(1.0 / stream.rate, chunk))
        times = np.concatenate([times, more])
    return times[times < stream.horizon]


def replication_streams(seed: int, rate: float, horizon: float, n: int) -> list:
    return [ArrivalStream(seed, rate, horizon, i) for i in range(n)]


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    """Event log of one sample path.

    Row i records the event at ``times[i]`` with the state just before and
    just after it; the two differ only at arrivals. Between rows i and i+1
    the state moves linearly from ``after[i]`` to ``before[i+1]``.
    """

    times: np.ndarray
    kinds: np.ndarray
    before: np.ndarray
    after: np.ndarray
    params: HighwayParams
    policy_id: str

    def __len__(self) -> int:
        return self.times.shape[0]

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def events(self):
        for i in range(len(self)):
            yield (
                float(self.times[i]),
                KIND_NAMES[self.kinds[i]],
                State(*map(float, self.before[i])),
                State(*map(float, self.after[i])),
            )

    @property
    def arrivals(self) -> np.ndarray:
        return self.times[self.kinds == _kernel.ARRIVAL]

    def total(self, side: str = "after") -> np.ndarray:
        arr = self.after if side == "after" else self.before
        return arr.sum(axis=1)

    def total_at(self, t, side: str = "after") -> np.ndarray:
        """|Q| at times ``t``; ``side`` picks the right or left limit at jumps."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        tot_a = self.total("after")
        tot_b = self.total("before")
        j = np.clip(np.searchsorted(self.times, t, side="left"), 0, len(self) - 1)
        exact = self.times[j] == t
        i = np.clip(j - 1, 0, len(self) - 2)
        t0 = self.times[i]
        t1 = self.times[i + 1]
        w = np.clip((t - t0) / np.where(t1 > t0, t1 - t0, 1.0), 0.0, 1.0)
        val = tot_a[i] + w * (tot_b[i + 1] - tot_a[i])
        hit = (tot_b if side == "before" else tot_a)[j]
        return np.where(exact, hit, val)

    def to_csv(self, path=None) -> str:
        """Write ``time_hr,kind,q0m,q1m,q1o,q2m`` rows (state after each event)."""
        buf = io.StringIO()
        buf.write("time_hr,kind,q0m,q1m,q1o,q2m\n")
        for t, k, row in zip(self.times.tolist(), self.kinds.tolist(), self.after.tolist()):
            buf.write(f"{t!r},{KIND_NAMES[k]},{row[0]!r},{row[1]!r},{row[2]!r},{row[3]!r}\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


# ---------------------------------------------------------------------------
# Python engine


def _surface_hits(q, g, surfaces):
    """Earliest time and target of a declared switching surface ahead of q."""
    best = (math.inf, None, None)
    for s in surfaces:
        c = s.component
        rate = g[c]
        if rate == 0.0:
            continue
        x = q[c]
        if isinstance(s, Lattice):
            if rate < 0:
                k = math.ceil(x / s.step - TOL / s.step) - 1
                target = k * s.step
                if target < -TOL:
                    continue
            else:
                k = math.floor(x / s.step + TOL / s.step) + 1
                target = k * s.step
        elif isinstance(s, Level):
            target = s.value
            if (target - x) * rate <= 0 or abs(target - x) <= TOL:
                continue
        else:
            raise TypeError(f"unknown surface {s!r}")
        tau = (target - x) / rate
        if tau > 0 and tau < best[0]:
            best = (tau, c, max(target, 0.0))
    return best


def _boundary_hits(q, g, p):
    best = (math.inf, None, None)
    for c in range(4):
        if g[c] < 0 and q[c] > TOL:
            tau = q[c] / -g[c]
            if tau < best[0]:
                best = (tau, c, 0.0)
    if g[3] > 0 and q[3] < p.Theta - TOL:
        tau = (p.Theta - q[3]) / g[3]
        if tau < best[0]:
            best = (tau, 3, p.Theta)
    return best


def _snap_list(q, p, surfaces):
    for c in range(4):
        if abs(q[c]) <= TOL or q[c] < 0:
            q[c] = 0.0
    if abs(q[3] - p.Theta) <= TOL:
        q[3] = p.Theta
    for s in surfaces or ():
        if isinstance(s, Lattice):
            k = math.floor(q[s.component] / s.step + 0.5)
            if abs(q[s.component] - k * s.step) <= TOL:
                q[s.component] = k * s.step
        elif abs(q[s.component] - s.value) <= TOL:
            q[s.component] = s.value


def _field(q, policy, p):
    u = policy.mu(State(*q))
    if not (u >= 0 and math.isfinite(u)):
        raise StateError(f"policy returned invalid gate rate {u!r} at {tuple(q)}")
    g = field_components(q[0], q[1], q[2], q[3], u, p)
    return u, g[:4]


def advance(q: State, policy: Policy, p: HighwayParams, until: float, t0: float = 0.0,
            max_step: float = 1e-3, time_tol: float = 1e-9):
    """Follow the arrival-free flow from ``q`` at time ``t0`` to ``until``.

    Returns the final state and a list of ``(time, kind, state)`` crossing
    events. Policies that declare switching surfaces are integrated exactly;
    otherwise the path is checked every ``max_step`` hours and switches of mu
    are located by bisection to ``time_tol``.
    """
    validate_state(q, p)
    if until <= t0:
        raise ValueError("until must exceed the current time")
    surfaces = policy.switching_surfaces
    x = list(q)
    t = t0
    events = []
    while t < until:
        u, g = _field(x, policy, p)
        tau, comp, target = _boundary_hits(x, g, p)
        kind = "boundary-crossing"
        if surfaces is not None:
            ts, cs, vs = _surface_hits(x, g, surfaces)
            if ts < tau:
                tau, comp, target, kind = ts, cs, vs, "policy-switch"
                if target == 0.0:
                    kind = "boundary-crossing"
        else:
            # numerical search for a switch of mu inside the next window
            window = min(max_step, until - t, tau)
            y = [x[i] + g[i] * window for i in range(4)]
            _snap_list(y, p, None)
            if policy.mu(State(*y)) != u:
                lo, hi = 0.0, window
                while hi - lo > time_tol:
                    mid = 0.5 * (lo + hi)
                    z = [max(x[i] + g[i] * mid, 0.0) for i in range(4)]
                    if policy.mu(State(*z)) != u:
                        hi = mid
                    else:
                        lo = mid
                tau, comp, target, kind = hi, None, None, "policy-switch"
            elif window < tau:
                tau, comp, target, kind = window, None, None, None
        if t + tau >= until:
            x = [x[i] + g[i] * (until - t) for i in range(4)]
            _snap_list(x, p, surfaces)
            t = until
            break
        x = [x[i] + g[i] * tau for i in range(4)]
        if comp is not None:
            x[comp] = target
        _snap_list(x, p, surfaces)
        t += tau
        if kind is not None:
            events.append((t, kind, State(*x)))
            if len(events) > MAX_CROSSINGS:
                raise ChatteringError(
                    f"more than {MAX_CROSSINGS} crossings before t={until!r}; last state {tuple(x)}"
                )
    return State(*x), events


def _simulate_python(p, policy, arrivals, horizon, q0):
    times = [0.0]
    kinds = [_kernel.START]
    before = [tuple(q0)]
    after = [tuple(q0)]
    code = {name: i for i, name in enumerate(KIND_NAMES)}
    q = q0
    t = 0.0
    for ta in list(arrivals) + [horizon]:
        if ta > t:
            q, events = advance(q, policy, p, ta, t0=t)
            for te, kind, s in events:
                times.append(te)
                kinds.append(code[kind])
                before.append(tuple(s))
                after.append(tuple(s))
            t = ta
        times.append(t)
        before.append(tuple(q))
        if ta < horizon:
            q = reset_map(q, policy.nu(q), p)
            kinds.append(_kernel.ARRIVAL)
        else:
            kinds.append(_kernel.HORIZON)
        after.append(tuple(q))
    return (
        np.array(times),
        np.array(kinds, dtype=np.int8),
        np.array(before, dtype=float),
        np.array(after, dtype=float),
    )


def simulate(p: HighwayParams, policy: Policy, stream: ArrivalStream, q0: State = State(),
             engine: str = "auto", arrivals: Optional[np.ndarray] = None) -> Trajectory:
    """Simulate one sample path driven by ``stream`` (or explicit ``arrivals``)."""
    validate_params(p)
    validate_state(q0, p)
    if arrivals is None:
        arrivals = sample_arrivals(stream)
    arrivals = np.asarray(arrivals, dtype=float)
    horizon = float(stream.horizon)
    if engine == "auto":
        engine = "kernel" if policy.code >= 0 else "python"
    if engine == "kernel":
        if policy.code < 0:
            raise ValueError("the compiled engine only runs built-in policies")
        times, kinds, before, after, n, status = _kernel.run(
            policy.code, policy.kernel_par, arrivals, horizon,
            np.array(q0, dtype=float), MAX_CROSSINGS,
        )
        if status != 0:
            raise ChatteringError(f"more than {MAX_CROSSINGS} crossings between arrivals near t={times[n - 1]!r}")
        times, kinds, before, after = times[:n].copy(), kinds[:n].copy(), before[:n].copy(), after[:n].copy()
    elif engine == "python":
        times, kinds, before, after = _simulate_python(p, policy, arrivals, horizon, q0)
    else:
        raise ValueError(f"unknown engine {engine!r}")
    return Trajectory(times, kinds, before, after, p, policy.id)


def coupled_simulate(p: HighwayParams, policy_a: Policy, policy_b: Policy, stream: ArrivalStream,
                     q0: State = State(), engine: str = "auto"):
    """Two paths driven by one and the same arrival sequence."""
    arrivals = sample_arrivals(stream)
    ta = simulate(p, policy_a, stream, q0, engine, arrivals)
    tb = simulate(p, policy_b, stream, q0, engine, arrivals)
    return ta, tb


def dominance_gap(ta: Trajectory, tb: Trajectory) -> float:
    """max over merged event times of |Q_a| - |Q_b|, both one-sided limits."""
    grid = np.union1d(ta.times, tb.times)
    gap = -math.inf
    for side in ("before", "after"):
        gap = max(gap, float(np.max(ta.total_at(grid, side) - tb.total_at(grid, side))))
    return gap


# ---------------------------------------------------------------------------
# path functionals


@dataclass(frozen=True)
class PathMetrics:
    time_avg_total_queue: float
    spillback_fraction: float
    per_queue_averages: tuple
    max_total_queue: float
    divergence_slope: float


def _segments(traj: Trajectory):
    t0 = traj.times[:-1]
    t1 = traj.times[1:]
    return t0, t1, traj.after[:-1], traj.before[1:]


def _lin_moments(a, b, ya, yb):
    """Integrals of y and t*y over [a, b] for y linear from ya to yb."""
    h = b - a
    iy = h * (ya + yb) / 2.0
    ity = h / 6.0 * (a * (2 * ya + yb) + b * (ya + 2 * yb))
    return iy, ity


def divergence_slope(traj: Trajectory, start_fraction: float = 0.5) -> float:
    """Continuous least-squares slope of |Q(t)| over the tail of the horizon."""
    T = traj.horizon
    t_lo = start_fraction * T
    if T - t_lo <= 0:
        return 0.0
    t0, t1, qa, qb = _segments(traj)
    ya = qa.sum(axis=1)
    yb = qb.sum(axis=1)
    keep = t1 > t_lo
    t0, t1, ya, yb = t0[keep], t1[keep], ya[keep], yb[keep]
    # clip the first segment at t_lo
    span = np.where(t1 > t0, t1 - t0, 1.0)
    w = np.clip((t_lo - t0) / span, 0.0, 1.0)
    ya = ya + w * (yb - ya)
    t0 = np.maximum(t0, t_lo)
    iy, ity = _lin_moments(t0, t1, ya, yb)
    L = T - t_lo
    tbar = (T + t_lo) / 2.0
    cov = ity.sum() - tbar * iy.sum()
    return float(cov / (L**3 / 12.0))


def metrics(traj: Trajectory) -> PathMetrics:
    """Exact time averages over the piecewise-linear path."""
    T = traj.horizon
    if len(traj) < 2 or T <= 0:
        zero = (0.0,) * 4
        return PathMetrics(0.0, 0.0, zero, float(traj.total().max(initial=0.0)), 0.0)
    t0, t1, qa, qb = _segments(traj)
    dt = (t1 - t0)[:, None]
    integ = (dt * (qa + qb) / 2.0).sum(axis=0)
    per = tuple(float(x) / T for x in integ)
    mid = (qa + qb) / 2.0
    spill = (mid[:, 1] > TOL) & (mid[:, 3] >= traj.params.Theta - TOL)
    frac = float(((t1 - t0) * spill).sum() / T)
    mx = float(max(traj.total("after").max(), traj.total("before").max()))
    return PathMetrics(float(sum(per)), min(max(frac, 0.0), 1.0), per, mx, divergence_slope(traj))


def instability_threshold(p: HighwayParams) -> float:
    """Slope (veh/hr) above which a path is declared divergent."""
    return 0.01 * p.platoon_mass * p.lam


@dataclass(frozen=True)
class DivergenceTest:
    slope: float
    stderr: float
    threshold: float

    @property
    def diverges(self) -> bool:
        """Positive slope, significant at the 95% level (one-sided)."""
        return self.slope > 0 and self.slope > 1.645 * self.stderr

    @property
    def stable(self) -> bool:
        return self.slope <= self.threshold


def divergence_test(traj: Trajectory, n_samples: int = 2000, start_fraction: float = 0.5) -> DivergenceTest:
    """OLS slope of |Q| sampled on a uniform grid over the tail of the horizon.

    The standard error uses non-overlapping batch means of the residuals
    (20 batches) so that serial correlation does not make it optimistic.
    """
    T = traj.horizon
    grid = np.linspace(start_fraction * T, T, n_samples)
    y = traj.total_at(grid)
    x = grid - grid.mean()
    sxx = float((x * x).sum())
    slope = float((x * (y - y.mean())).sum() / sxx)
    resid = y - y.mean() - slope * x
    nb = 20
    contrib = (x * resid)[: n_samples - n_samples % nb].reshape(nb, -1).sum(axis=1)
    se = float(math.sqrt((contrib**2).sum()) / sxx)
    cont = divergence_slope(traj, start_fraction)
    return DivergenceTest(cont, se, instability_threshold(traj.params))


def level_occupancy(traj: Trajectory, nmax: int = 200) -> np.ndarray:
    """Time-average distribution of ceil((gamma/l)(q0m + q1m + q2m)), levels 0..nmax."""
    occ = _kernel.level_occupancy(
        traj.times, traj.before, traj.after, len(traj), traj.params.platoon_mass, nmax
    )
    return occ / occ.sum()


def mass_balance_residual(traj: Trajectory, policy: Policy) -> float:
    """Inflow minus outflow minus change in |Q|, relative to the total inflow."""
    p = traj.params
    t0, t1, qa, qb = _segments(traj)
    out = 0.0
    for i in range(t0.shape[0]):
        if t1[i] <= t0[i]:
            continue
        mid = (qa[i] + qb[i]) / 2.0
        u = policy.mu(State(*mid))
        g = field_components(*mid, u, p)
        out += (g[4] + g[5]) * (t1[i] - t0[i])
    T = traj.horizon
    inflow = (p.background + p.offramp_demand) * T + p.platoon_mass * traj.arrivals.shape[0]
    change = traj.after[-1].sum() - traj.after[0].sum()
    return abs(inflow - out - change) / max(inflow, 1.0)
