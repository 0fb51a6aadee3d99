"""Gate discharge and allocation policies.

A policy is a pair (mu, nu): ``mu(q)`` is the rate (veh/hr) at which the
virtual gate upstream of link 1 releases held CAVs, ``nu(q)`` splits an
arriving platoon's effective mass l/gamma between gate, link 1 and link 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _kernel
from .model import (
    TOL,
    HighwayParams,
    State,
    field_components,
    uncontrolled_reset,
    validate_params,
)
from .queueing import service_time


@dataclass(frozen=True)
class Lattice:
    """Surfaces {q[component] = k * step}, k = 0, 1, 2, ..."""

    component: int
    step: float


@dataclass(frozen=True)
class Level:
    """Surface {q[component] = value}."""

    component: int
    value: float


@dataclass(frozen=True)
class Policy:
    """State-feedback control (mu, nu).

    Attributes:
        id: short identifier, also used by the CLI.
        mu: State -> gate discharge rate (veh/hr).
        nu: State -> allocation (v0, v1, v2) in effective vehicles.
        switching_surfaces: surfaces on which mu or nu may change branch, or
            None when the integrator has to locate switches numerically.
        metadata: free-form notes (clamps, thresholds, admissibility flags).
        invariant_ceiling: bound on q2m over the invariant set reached from
            the zero state, when known in closed form.
        uses_gate: False if the policy never places mass at the gate.
        code: compiled-kernel policy code, or -1 for user policies.
        kernel_par: packed parameters for the compiled kernel.
    """

    id: str
    mu: Callable[[State], float]
    nu: Callable[[State], tuple]
    switching_surfaces: Optional[tuple] = None
    metadata: dict = field(default_factory=dict)
    invariant_ceiling: Optional[float] = None
    uses_gate: bool = True
    code: int = -1
    kernel_par: Optional[np.ndarray] = field(default=None, repr=False, compare=False)


def _builtin_mu(code: int, par: np.ndarray):
    def mu(q: State) -> float:
        return float(_kernel.mu_code(code, q[0], q[1], q[2], q[3], par))

    return mu


def zero_policy(p: Optional[HighwayParams] = None) -> Policy:
    """No coordination: the gate is never used, platoons join link 2 directly."""
    p = p or HighwayParams()
    return Policy(
        id="zero",
        mu=lambda q: 0.0,
        nu=lambda q: (0.0, 0.0, 0.0),
        switching_surfaces=(),
        metadata={"declared_admissible": True},
        uses_gate=False,
        code=0,
        kernel_par=_kernel.pack_params(p),
    )


def alpha_band(p: HighwayParams) -> tuple[float, float]:
    """Gate rates that keep link 2 saturated without queueing in link 1."""
    lo = p.F - p.R - p.background
    hi = p.F - ((1.0 - p.eta) * p.rho + (1.0 - p.rho)) * p.a
    return lo, hi


def effective_alpha(p: HighwayParams) -> tuple[float, dict]:
    """Clamp v0/h into the admissible band and describe what happened."""
    lo, hi = alpha_band(p)
    alpha = p.alpha
    info = {"alpha_nominal": alpha, "alpha_band": (lo, hi)}
    if lo > hi:
        info["band_empty"] = True
        eff = max(lo, 1e-9)
    else:
        eff = min(max(alpha, lo, 1e-9), hi) if hi > 0 else max(lo, 1e-9)
    info["alpha_clamped"] = eff != alpha
    info["alpha"] = eff
    return eff, info


def _hold_at_gate(p: HighwayParams):
    m = p.platoon_mass

    def nu(q: State) -> tuple:
        base = uncontrolled_reset(q, p)
        return (m, q.q1m - base.q1m, q.q2m - base.q2m)

    return nu


def headway_regulation(p: HighwayParams) -> Policy:
    """Hold every arriving platoon at the gate and release whole platoons.

    The gate runs at rate alpha while link 2 is empty or while a platoon is
    part-way through release, and is shut otherwise. It is also shut while
    link 1 queues or link 2 spills back.
    """
    validate_params(p)
    alpha, info = effective_alpha(p)
    m = p.platoon_mass
    par = _kernel.pack_params(p, alpha=alpha, step=m)
    ceiling = m * max(0.0, 1.0 - p.drain_rate / alpha)
    return Policy(
        id="headway",
        mu=_builtin_mu(1, par),
        nu=_hold_at_gate(p),
        switching_surfaces=(Lattice(0, m), Level(3, 0.0)),
        metadata=dict(info, declared_admissible=True),
        invariant_ceiling=ceiling,
        code=1,
        kernel_par=par,
    )


def size_threshold(p: HighwayParams) -> tuple[float, float]:
    """(literal, used) q2m thresholds for size management.

    The literal value exceeds Theta whenever a < a*, which would let the
    gate open with no room for a half-platoon; the used value is capped at
    Theta - l/(2 gamma).
    """
    m = p.platoon_mass
    denom = 2.0 * p.gamma * p.eta * p.rho * p.a
    if denom > 0:
        literal = p.Theta - p.l * (p.mainline_load - (p.F - p.R)) / denom
    else:
        literal = math.inf
    return literal, min(literal, p.Theta - m / 2.0)


def size_management(p: HighwayParams) -> Policy:
    """Release held platoons in halves, each only when link 2 can absorb it."""
    validate_params(p)
    alpha, info = effective_alpha(p)
    m = p.platoon_mass
    literal, thr = size_threshold(p)
    par = _kernel.pack_params(p, alpha=alpha, step=m / 2.0, thr=thr)
    ceiling = thr + (m / 2.0) * max(0.0, 1.0 - p.drain_rate / alpha)
    meta = dict(
        info,
        declared_admissible=True,
        threshold_literal=literal,
        threshold=thr,
        threshold_capped=thr != literal,
    )
    return Policy(
        id="split",
        mu=_builtin_mu(2, par),
        nu=_hold_at_gate(p),
        switching_surfaces=(Lattice(0, m / 2.0), Level(3, thr), Level(3, 0.0)),
        metadata=meta,
        invariant_ceiling=ceiling,
        code=2,
        kernel_par=par,
    )


POLICIES = {
    "zero": zero_policy,
    "headway": headway_regulation,
    "split": size_management,
}


def make_policy(name: str, p: HighwayParams) -> Policy:
    try:
        return POLICIES[name](p)
    except KeyError:
        raise ValueError(f"unknown policy {name!r}; choose from {sorted(POLICIES)}") from None


# ---------------------------------------------------------------------------
# verification on sampled states


@dataclass
class ClauseResult:
    passed: bool
    checked: int
    witness: Optional[State] = None
    detail: str = ""


@dataclass
class CheckReport:
    policy_id: str
    clauses: dict
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.clauses.values())

    def failed(self) -> list:
        return [k for k, c in self.clauses.items() if not c.passed]

    def summary(self) -> str:
        lines = [f"policy {self.policy_id}: {'PASS' if self.passed else 'FAIL'}"]
        for name, c in self.clauses.items():
            tag = "pass" if c.passed else "FAIL"
            extra = f" witness={tuple(c.witness)}" if c.witness is not None else ""
            lines.append(f"  {tag} {name} ({c.checked} states){extra} {c.detail}".rstrip())
        lines.extend(f"  note: {n}" for n in self.notes)
        return "\n".join(lines)


def _clause(name, results, q, ok, detail=""):
    r = results.setdefault(name, ClauseResult(True, 0))
    r.checked += 1
    if not ok and r.passed:
        r.passed = False
        r.witness = q
        r.detail = detail


def sample_states(p: HighwayParams, policy: Policy, n: int, rng: np.random.Generator,
                  restrict_gate: bool = False) -> list:
    """Random states plus every boundary face and declared switching surface.

    With ``restrict_gate`` the sample lies in {q0m = 0, q1m > 0 => q2m = Theta},
    the region an uncoordinated model never leaves.
    """
    m = p.platoon_mass
    theta = p.Theta
    scale = 20.0 * m
    q2_special = [0.0, theta, theta - 1.0, theta - m, theta - m / 2.0, m, min(m / 2.0, theta)]
    q0_special = [0.0, m / 2.0, m, 1.5 * m, 2.0 * m, 0.25 * m]
    for s in policy.switching_surfaces or ():
        if isinstance(s, Level) and s.component == 3:
            q2_special += [s.value, s.value - 1e-3, s.value + 1e-3]
        elif isinstance(s, Lattice) and s.component == 0:
            q0_special += [k * s.step for k in range(4)]
    q2_special = [x for x in q2_special if 0.0 <= x <= theta]

    out = []
    for i in range(n):
        choice = rng.integers(0, 4, size=4)
        q0 = 0.0 if choice[0] == 0 else (rng.choice(q0_special) if choice[0] == 1 else rng.uniform(0, scale))
        q1m = 0.0 if choice[1] <= 1 else rng.uniform(0, scale)
        q1o = 0.0 if choice[2] <= 1 else rng.uniform(0, scale)
        q2 = rng.choice(q2_special) if choice[3] <= 1 else rng.uniform(0, theta)
        if restrict_gate:
            q0 = 0.0
            if q1m > 0:
                q2 = theta
        out.append(State(float(q0), float(q1m), float(q1o), float(q2)))
    return out


def _increments(policy: Policy, q: State, p: HighwayParams) -> tuple:
    """Net change S(q; nu(q)) - q of the gate, link-1 and link-2 queues."""
    v = policy.nu(q)
    base = uncontrolled_reset(q, p)
    return (
        base.q0m + v[0] - q.q0m,
        base.q1m + v[1] - q.q1m,
        base.q2m + v[2] - q.q2m,
    )


def admissibility_check(policy: Policy, p: HighwayParams, sample_budget: int = 2000, seed: int = 0) -> CheckReport:
    """Check the regularity, FCFS and monotonicity requirements on a policy.

    Allocation bounds are checked on nu(q) itself. The FCFS and monotonicity
    requirements are checked on the net allocation S(q; nu(q)) - q, which is
    what the arriving platoon actually does to each queue. Policies that never
    use the gate are checked on the region their state cannot leave.
    """
    if sample_budget < 1000:
        raise ValueError("sample_budget must be at least 1000")
    rng = np.random.default_rng(seed)
    restrict = not policy.uses_gate
    states = sample_states(p, policy, sample_budget, rng, restrict_gate=restrict)
    m = p.platoon_mass
    tol = 1e-9 * max(1.0, m)
    res: dict = {}
    bound = None
    for q in states:
        u = policy.mu(q)
        _clause("mu_nonnegative_bounded", res, q, math.isfinite(u) and u >= 0.0)
        bound = u if bound is None else max(bound, u)
        if q.q0m == 0.0:
            _clause("mu_zero_on_empty_gate", res, q, u == 0.0, f"mu={u!r}")
        v = policy.nu(q)
        ok = (
            abs(sum(v)) <= tol
            and -tol <= v[0] <= m + tol
            and -m - tol <= v[1] <= tol
            and max(-m, q.q2m - p.Theta) - tol <= v[2] <= tol
        )
        _clause("nu_conserves_and_bounded", res, q, ok, f"nu={tuple(v)}")
        w = _increments(policy, q, p)
        if q.q1m > TOL:
            _clause("fcfs_no_link2_behind_link1_queue", res, q, abs(w[2]) <= tol, f"w={w}")
        if q.q0m > TOL:
            _clause("fcfs_nothing_past_gate_queue", res, q, abs(w[1]) <= tol and abs(w[2]) <= tol, f"w={w}")

    for q in states:
        u = policy.mu(q)
        w = _increments(policy, q, p)
        for comp in (0, 1, 2, 3):
            delta = float(rng.uniform(1e-3, 3.0 * m))
            arr = list(q)
            arr[comp] += delta
            if comp == 3:
                arr[3] = min(arr[3], p.Theta)
                if arr[3] <= q.q2m:
                    continue
            q2 = State(*arr)
            if restrict and (q2.q0m > 0 or (q2.q1m > 0 and q2.q2m < p.Theta)):
                continue
            if comp != 0:
                u2 = policy.mu(q2)
                _clause("mu_nonincreasing_downstream", res, q, u2 <= u + tol, f"step in q[{comp}] -> {tuple(q2)}")
            w2 = _increments(policy, q2, p)
            # link index of each net allocation: gate 0, link-1 mainline 1, link 2 3
            for k, own in enumerate((0, 1, 3)):
                if comp == own:
                    ok = w2[k] <= w[k] + tol
                elif comp == 2:
                    ok = (w2[k] <= w[k] + tol) if own == 1 else (w2[k] >= w[k] - tol)
                else:
                    ok = w2[k] >= w[k] - tol
                _clause("nu_monotone", res, q, ok, f"step in q[{comp}] -> {tuple(q2)}")
    rep = CheckReport(policy.id, res)
    if restrict:
        rep.notes.append("checked on {q0m = 0, q1m > 0 => q2m = Theta} (gate never used)")
    if policy.metadata.get("alpha_clamped"):
        rep.notes.append(f"gate rate clamped to {policy.metadata['alpha']!r}")
    if policy.metadata.get("threshold_capped"):
        rep.notes.append(
            f"q2m threshold {policy.metadata['threshold_literal']!r} capped at {policy.metadata['threshold']!r}"
        )
    return rep


def optimality_check(policy: Policy, p: HighwayParams, sample_budget: int = 2000, seed: int = 0) -> CheckReport:
    """Check the sufficient conditions for throughput- and queue-optimality.

    The two reset conditions are checked where the process can actually be
    when a platoon arrives under such a policy: q1m = 0 and q2m < Theta.
    """
    rng = np.random.default_rng(seed)
    states = sample_states(p, policy, sample_budget, rng)
    upper = p.F - ((1.0 - p.eta) * p.rho + (1.0 - p.rho)) * p.a
    lower = p.F - p.R - p.background
    tol = 1e-9 * max(1.0, p.F)
    res: dict = {}
    for q in states:
        u = policy.mu(q)
        if q.q1m > TOL or q.q2m >= p.Theta - TOL:
            _clause("gate_shut_on_queue_or_spillback", res, q, u == 0.0, f"mu={u!r}")
        _clause("gate_below_link1_slack", res, q, u <= upper + tol, f"mu={u!r} > {upper!r}")
        if q.q0m > TOL and q.q2m <= TOL:
            _clause("gate_saturates_bottleneck", res, q, u + p.background >= lower - tol, f"mu={u!r}")
        if q.q1m <= TOL and q.q2m < p.Theta - TOL:
            v = policy.nu(q)
            base = uncontrolled_reset(q, p)
            s1 = base.q1m + v[1]
            s2 = base.q2m + v[2]
            _clause("reset_leaves_link1_empty", res, q, abs(s1) <= TOL, f"S1m={s1!r}")
            _clause("reset_below_buffer", res, q, s2 < p.Theta - TOL, f"S2m={s2!r}")
    rep = CheckReport(policy.id, res)
    if policy.metadata.get("threshold_capped"):
        rep.notes.append(
            f"literal q2m threshold {policy.metadata['threshold_literal']!r} exceeds "
            f"the buffer; using {policy.metadata['threshold']!r}"
        )
    if policy.metadata.get("band_empty"):
        rep.notes.append("no gate rate satisfies both rate conditions at this demand")
    return rep


# ---------------------------------------------------------------------------
# practical translations


class StallError(RuntimeError):
    """The deterministic flow stopped before reaching the requested target."""


def _deterministic_path(q: State, policy: Policy, p: HighwayParams, horizon: float):
    from .sim import advance

    end, events = advance(q, policy, p, horizon)
    pts = [(0.0, q)] + [(t, s) for t, _, s in events]
    if pts[-1][0] < horizon:
        pts.append((horizon, end))
    return pts


def headway_delay(q_before: State, p: HighwayParams, policy: Optional[Policy] = None,
                  horizon: Optional[float] = None) -> float:
    """Time (hr) until the gate has released everything held ahead of a new platoon.

    The platoon arriving at ``q_before`` is held behind q0m(before) of gate
    mass; the delay is when that mass has been discharged along the
    arrival-free flow.
    """
    policy = policy or headway_regulation(p)
    need = q_before.q0m
    if need <= TOL:
        return 0.0
    start = State(q_before.q0m + p.platoon_mass, q_before.q1m, q_before.q1o, q_before.q2m)
    if horizon is None:
        horizon = 10.0 * (need + p.Theta + 1.0) / max(p.drain_rate, 1e-9) + 1.0
    target = start.q0m - need
    pts = _deterministic_path(start, policy, p, horizon)
    for (ta, qa), (tb, qb) in zip(pts, pts[1:]):
        if qb.q0m <= target + TOL:
            if qa.q0m == qb.q0m:
                return ta
            frac = (qa.q0m - target) / (qa.q0m - qb.q0m)
            return ta + frac * (tb - ta)
    raise StallError(
        f"gate still holds {pts[-1][1].q0m - target!r} veh of earlier platoons after {horizon!r} hr"
    )


def min_bottleneck_headway(p: HighwayParams) -> float:
    """Steady headway (hr) between regulated platoons at the bottleneck.

    One platoon is released at rate alpha and the link-2 queue it leaves
    then drains at F - R - (1-eta) rho a; the two phases add up to
    l / (gamma (F - R - (1-eta) rho a)).
    """
    return service_time(p)


def recommended_speed(W: float, p: HighwayParams) -> float:
    """Speed (mi/hr) that delays arrival over the whole section by W hours."""
    if W < 0:
        raise ValueError(f"delay must be non-negative, got {W!r}")
    L = p.L1 + p.L2
    return L / (L / p.v0 + W)


@dataclass(frozen=True)
class SplitSchedule:
    split: bool
    T: float
    W1: float
    W2: float
    v1: float
    v2: float


def split_gap(p: HighwayParams) -> float:
    return p.l / (2.0 * p.gamma * p.drain_rate)


def split_schedule(q_before: State, p: HighwayParams, policy: Optional[Policy] = None,
                   horizon: Optional[float] = None) -> SplitSchedule:
    """Decide whether to split an arriving platoon and when each half should arrive.

    T is the time at which the bottleneck has discharged everything queued
    ahead of the platoon plus whatever part of a half-platoon still fits
    below Theta - l/(2 gamma); the platoon is split if link 2 is predicted
    to be at or above that level at T.
    """
    policy = policy or size_management(p)
    m = p.platoon_mass
    need = q_before.q0m + q_before.q1m + min(m / 2.0, max(p.Theta - m / 2.0 - q_before.q2m, 0.0))
    start = State(q_before.q0m + m, q_before.q1m, q_before.q1o, q_before.q2m)
    if horizon is None:
        horizon = 10.0 * (need + p.Theta + m) / max(p.drain_rate, 1e-9) + 1.0
    pts = _deterministic_path(start, policy, p, horizon)
    done = 0.0
    T = None
    q_T = start
    if need <= TOL:
        T = 0.0
    else:
        for (ta, qa), (tb, qb) in zip(pts, pts[1:]):
            # f2 is constant on the open segment; evaluate it at the midpoint
            mid = State(*((np.asarray(qa) + np.asarray(qb)) / 2.0))
            f2 = field_components(*mid, policy.mu(mid), p)[4]
            gain = f2 * (tb - ta)
            if done + gain >= need - TOL:
                T = ta + (need - done) / f2 if f2 > 0 else ta
                frac = (T - ta) / (tb - ta) if tb > ta else 0.0
                q_T = State(*(np.asarray(qa) + frac * (np.asarray(qb) - np.asarray(qa))))
                break
            done += gain
        if T is None:
            raise StallError(f"bottleneck discharged only {done!r} of {need!r} veh within {horizon!r} hr")
    if T == 0.0:
        q_T = start
    split = q_T.q2m >= p.Theta - m / 2.0 - TOL
    if not split:
        return SplitSchedule(False, T, 0.0, 0.0, p.v0, p.v0)
    W1 = T
    W2 = T + split_gap(p)
    return SplitSchedule(True, T, W1, W2, recommended_speed(W1, p), recommended_speed(W2, p))
