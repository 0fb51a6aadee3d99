"""Deterministic skeleton of the two-link stochastic fluid model.

Units are vehicles (effective) and hours throughout. A platoon of ``l``
CAVs contributes ``l / gamma`` effective vehicles to whatever queue it joins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from typing import NamedTuple

import numpy as np

# Absolute tolerance (veh) used to snap states onto the boundaries q_k = 0 and
# q2m = Theta before a flow case is selected.
TOL = 1e-9


class ParameterError(ValueError):
    """Raised when a HighwayParams invariant is violated."""


class StateError(ValueError):
    """Raised for a state or allocation outside the admissible set."""


@dataclass(frozen=True)
class HighwayParams:
    """Model constants.

    Defaults are the nominal values (F=4500, R=1500, rho=0.75, eta=0.2,
    gamma=2, l=5, Theta=50) with a total demand of 2500 veh/hr, a nominal
    speed of 60 mi/hr, an intra-platoon spacing of 0.005 mi and a 24.4 mi
    section.
    """

    F: float = 4500.0
    R: float = 1500.0
    rho: float = 0.75
    eta: float = 0.2
    gamma: float = 2.0
    l: float = 5.0
    Theta: float = 50.0
    a: float = 2500.0
    v0: float = 60.0
    h: float = 0.005
    L1: float = 24.0
    L2: float = 0.4

    @property
    def lam(self) -> float:
        """Platoon arrival rate (platoons/hr)."""
        return self.eta * self.rho * self.a / self.l

    @property
    def alpha(self) -> float:
        """Saturation discharge rate of CAVs, v0 / h (veh/hr)."""
        return self.v0 / self.h

    @property
    def platoon_mass(self) -> float:
        return self.l / self.gamma

    @property
    def background(self) -> float:
        """Mainline non-CAV inflow (1 - eta) rho a."""
        return (1.0 - self.eta) * self.rho * self.a

    @property
    def offramp_demand(self) -> float:
        return (1.0 - self.rho) * self.a

    @property
    def drain_rate(self) -> float:
        """Rate F - R - (1 - eta) rho a at which a bottleneck queue empties."""
        return self.F - self.R - self.background

    @property
    def mainline_load(self) -> float:
        """Effective mainline demand (eta/gamma + 1 - eta) rho a."""
        return (self.eta / self.gamma + 1.0 - self.eta) * self.rho * self.a

    @property
    def length(self) -> float:
        return self.L1 + self.L2

    def replace(self, **changes) -> "HighwayParams":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


class State(NamedTuple):
    """Effective queue vector [q0m, q1m, q1o, q2m]."""

    q0m: float = 0.0
    q1m: float = 0.0
    q1o: float = 0.0
    q2m: float = 0.0

    @property
    def total(self) -> float:
        """1-norm |q| of the state."""
        return self.q0m + self.q1m + self.q1o + self.q2m

    @property
    def mainline(self) -> float:
        return self.q0m + self.q1m + self.q2m

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=float)


class ControlInput(NamedTuple):
    u: float
    v: tuple[float, float, float]


class FlowVector(NamedTuple):
    f0: float
    f1: float
    f2: float
    r: float


def validate_params(p: HighwayParams) -> HighwayParams:
    """Return ``p`` unchanged, or raise ParameterError naming the first violation."""
    for f in fields(p):
        if not math.isfinite(getattr(p, f.name)):
            raise ParameterError(f"{f.name} must be finite")
    checks = [
        (p.R > 0, "R must be positive"),
        (p.F > p.R, "F must exceed R"),
        (0.0 <= p.rho <= 1.0, "rho must lie in [0, 1]"),
        (0.0 <= p.eta <= 1.0, "eta must lie in [0, 1]"),
        (p.gamma > 1.0, "gamma must exceed 1"),
        (p.l >= 1.0, "l must be at least 1"),
        (p.Theta > 0, "Theta must be positive"),
        (p.a >= 0, "a must be non-negative"),
        (p.v0 > 0, "v0 must be positive"),
        (p.h > 0, "h must be positive"),
        (p.L1 > 0, "L1 must be positive"),
        (p.L2 > 0, "L2 must be positive"),
    ]
    for ok, message in checks:
        if not ok:
            raise ParameterError(message)
    return p


def validate_state(q: State, p: HighwayParams) -> State:
    if any(not math.isfinite(x) for x in q):
        raise StateError(f"non-finite state {tuple(q)}")
    for name, x in zip(State._fields, q):
        if x < -TOL:
            raise StateError(f"{name} = {x!r} is negative")
    if q.q2m > p.Theta + TOL:
        raise StateError(f"q2m = {q.q2m!r} exceeds Theta = {p.Theta!r}")
    return q


def snap(q: State, p: HighwayParams) -> State:
    """Clip round-off so that near-boundary components sit exactly on it."""
    q0, q1, qo, q2 = (0.0 if abs(x) <= TOL else x for x in q)
    if abs(q2 - p.Theta) <= TOL:
        q2 = p.Theta
    return State(q0, q1, qo, q2)


def _flows(q1m: float, q1o: float, q2m: float, u: float, p: HighwayParams):
    spill = q2m >= p.Theta - TOL
    cap1 = p.F - p.R if spill else p.F
    if q1m <= TOL:
        f1 = min(p.background + u, cap1)
    else:
        f1 = cap1
    f2 = min(f1, p.F - p.R) if q2m <= TOL else p.F - p.R
    room = cap1 - f1
    if q1o <= TOL:
        r = min(p.offramp_demand, room, p.R)
    else:
        r = min(room, p.R)
    return f1, f2, max(r, 0.0)


def compute_flows(q: State, u: float, p: HighwayParams) -> FlowVector:
    """Gate, link-1 mainline, bottleneck and off-ramp flows at ``q``.

    Mainline traffic is discharged first at the link-1 interface; the
    off-ramp receives whatever capacity is left, which is zero while link 2
    spills back and link 1 holds a queue.
    """
    validate_state(q, p)
    if u < 0 or not math.isfinite(u):
        raise StateError(f"gate discharge must be non-negative, got {u!r}")
    f1, f2, r = _flows(q.q1m, q.q1o, q.q2m, u, p)
    return FlowVector(u, f1, f2, r)


def vector_field(q: State, u: float, p: HighwayParams, form: str = "conserving") -> np.ndarray:
    """Time derivative of the state between resets.

    ``form="conserving"`` uses G1m = (1-eta) rho a + u - f1, which keeps
    mainline mass balanced. ``form="printed"`` evaluates the variant
    G1m = (1-eta) rho a - (f1 + r) for comparison studies.
    """
    f = compute_flows(q, u, p)
    if form == "conserving":
        g1m = p.background + u - f.f1
    elif form == "printed":
        g1m = p.background - (f.f1 + f.r)
    else:
        raise ValueError(f"unknown vector field form {form!r}")
    return np.array([-u, g1m, p.offramp_demand - f.r, f.f1 - f.f2])


def field_components(q0m, q1m, q1o, q2m, u, p: HighwayParams):
    """Unchecked scalar version of :func:`vector_field` (conserving form)."""
    f1, f2, r = _flows(q1m, q1o, q2m, u, p)
    return -u, p.background + u - f1, p.offramp_demand - r, f1 - f2, f2, r


def uncontrolled_reset(q: State, p: HighwayParams) -> State:
    """S(q; 0): the platoon joins link 2, overflowing into link 1."""
    m = p.platoon_mass
    over = max(q.q2m + m - p.Theta, 0.0)
    return State(q.q0m, q.q1m + over, q.q1o, min(p.Theta, q.q2m + m))


def check_allocation(q: State, v, p: HighwayParams) -> None:
    v0, v1, v2 = v
    m = p.platoon_mass
    tol = TOL * max(1.0, m)
    if abs(v0 + v1 + v2) > tol:
        raise StateError(f"allocation must sum to zero, got {v0 + v1 + v2!r}")
    if not (-tol <= v0 <= m + tol):
        raise StateError(f"v0 = {v0!r} outside [0, l/gamma]")
    if not (-m - tol <= v1 <= tol):
        raise StateError(f"v1 = {v1!r} outside [-l/gamma, 0]")
    if not (max(-m, q.q2m - p.Theta) - tol <= v2 <= tol):
        raise StateError(f"v2 = {v2!r} outside [max(-l/gamma, q2m - Theta), 0]")


def reset_map(q: State, v, p: HighwayParams) -> State:
    """State right after a platoon arrival under allocation ``v``."""
    validate_state(q, p)
    check_allocation(q, v, p)
    base = uncontrolled_reset(q, p)
    out = State(base.q0m + v[0], base.q1m + v[1], base.q1o, base.q2m + v[2])
    for name, x in zip(State._fields, out):
        if x < -TOL:
            raise StateError(f"allocation makes {name} negative ({x!r})")
    return snap(State(*(max(x, 0.0) for x in out)), p)


def nominal_throughput(p: HighwayParams) -> float:
    """Capacity-only bound a* = min{R/(1-rho), (F-R)/((eta/gamma+1-eta) rho)}."""
    ramp = p.R / (1.0 - p.rho) if p.rho < 1.0 else math.inf
    coef = (p.eta / p.gamma + 1.0 - p.eta) * p.rho
    main = (p.F - p.R) / coef if coef > 0 else math.inf
    return min(ramp, main)
