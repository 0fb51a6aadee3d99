"""Stability criteria, throughput bounds and numerical drift certificates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy.optimize import minimize_scalar

from .model import (
    HighwayParams,
    State,
    field_components,
    nominal_throughput,
    reset_map,
    validate_params,
)
from .policies import Policy, make_policy, optimality_check
from .queueing import spillback_lower_bound

PolicyLike = Union[Policy, str, Callable[[HighwayParams], Policy]]


def _resolve(policy: PolicyLike, p: HighwayParams) -> Policy:
    if isinstance(policy, Policy):
        return policy
    if isinstance(policy, str):
        return make_policy(policy, p)
    return policy(p)


# ---------------------------------------------------------------------------
# sufficient stability criterion


@dataclass(frozen=True)
class StabilityVerdict:
    stable: bool
    lhs_max: float
    lhs_argmax: float
    rhs: float
    nominal_ok: bool
    note: str = ""


def criterion_lhs(xi: float, p: HighwayParams, policy: Policy) -> float:
    """Left side of the sufficient condition at the state (0, 0, 0, xi)."""
    q = State(0.0, 0.0, 0.0, float(xi))
    s = reset_map(q, policy.nu(q), p)
    jump = s.q0m + s.q1m + (s.q2m**2 - xi**2) / (2.0 * p.Theta)
    return (xi / p.Theta) * (p.background - (p.F - p.R)) + p.lam * jump


def criterion_rhs(p: HighwayParams) -> float:
    off = p.offramp_demand
    return (p.R - off) / off * ((p.F - p.R) - p.mainline_load)


def stability_criterion(p: HighwayParams, policy: PolicyLike = "zero",
                        invariant_box: Optional[tuple] = None, grid: int = 10_000) -> StabilityVerdict:
    """Evaluate the sufficient stability condition.

    The left side is maximised over xi in ``invariant_box`` (default
    [0, Theta]) on a uniform grid, then refined with a bounded scalar
    search on the bracket around the best grid point.
    """
    validate_params(p)
    pol = _resolve(policy, p)
    lo, hi = invariant_box if invariant_box is not None else (0.0, p.Theta)
    if not (0.0 <= lo <= hi <= p.Theta):
        raise ValueError(f"invariant box {(lo, hi)!r} must lie within [0, Theta]")
    nominal_ok = p.a < nominal_throughput(p)
    xs = np.linspace(lo, hi, grid)
    vals = np.array([criterion_lhs(x, p, pol) for x in xs])
    i = int(np.argmax(vals))
    best_x, best_v = float(xs[i]), float(vals[i])
    a, b = xs[max(i - 1, 0)], xs[min(i + 1, grid - 1)]
    if b > a:
        res = minimize_scalar(lambda x: -criterion_lhs(x, p, pol), bounds=(a, b), method="bounded",
                              options={"xatol": 1e-10})
        if -res.fun > best_v:
            best_x, best_v = float(res.x), float(-res.fun)
    if p.offramp_demand == 0.0:
        return StabilityVerdict(
            nominal_ok, best_v, best_x, math.inf, nominal_ok,
            "no off-ramp demand: the off-ramp queue cannot grow, only a < a* matters",
        )
    rhs = criterion_rhs(p)
    return StabilityVerdict(nominal_ok and best_v < rhs, best_v, best_x, rhs, nominal_ok)


def zero_policy_lhs_max(p: HighwayParams) -> tuple[float, float]:
    """Closed-form maximum (value, argmax) of the criterion's left side for nu = 0.

    The left side is linear on [0, Theta - l/gamma] and concave quadratic on
    [Theta - l/gamma, Theta], so the maximum is at 0, at the breakpoint, at
    Theta or at the quadratic's vertex.
    """
    m = p.platoon_mass
    th = p.Theta
    g = p.background - (p.F - p.R)
    lam = p.lam

    def lhs(x):
        if x <= th - m:
            return x * g / th + lam * (2 * x * m + m * m) / (2 * th)
        return x * g / th + lam * (x + m - th + (th * th - x * x) / (2 * th))

    cands = [0.0, th]
    bp = max(th - m, 0.0)
    cands.append(bp)
    if lam > 0:
        vertex = th * (1.0 + g / (lam * th))
        if bp <= vertex <= th:
            cands.append(vertex)
    vals = [lhs(x) for x in cands]
    j = int(np.argmax(vals))
    return vals[j], cands[j]


# ---------------------------------------------------------------------------
# throughput bounds without control


@dataclass(frozen=True)
class ThroughputBounds:
    lower: float
    upper: float
    zeta: float
    omega_at_upper: float
    nominal: float


def _ratio(num, den):
    return num / den if den > 0 else math.inf


def uncontrolled_bounds(p: HighwayParams, rounding: str = "ceil") -> ThroughputBounds:
    """Lower and upper bounds on the throughput of the uncoordinated model.

    The upper bound depends on omega, which itself depends on the demand.
    It is taken as the largest a with a <= min{a1, (1 - omega(a)) R/(1-rho)},
    found by bisection; omega is 1 once the platoon queue is saturated.
    """
    validate_params(p)
    coef = p.eta / p.gamma + 1.0 - p.eta
    a1 = _ratio(p.F - p.R, p.rho * coef)
    zeta = (1.0 - p.rho) - p.rho * coef * p.R / (p.F - p.R)
    root = math.sqrt(zeta**2 + 2.0 * p.rho * p.R * p.l / (p.gamma * p.Theta * (p.F - p.R)))
    a2 = _ratio(p.R, 1.0 - p.rho + 0.5 * (root - zeta))
    lower = min(a1, a2)
    nominal = nominal_throughput(p)

    def omega(a):
        q = p.replace(a=a)
        if q.drain_rate <= 0 or q.lam * q.l / (q.gamma * q.drain_rate) >= 1.0:
            return 1.0
        return spillback_lower_bound(q, rounding)

    def cap(a):
        return min(a1, (1.0 - omega(a)) * _ratio(p.R, 1.0 - p.rho))

    if math.isinf(nominal):
        return ThroughputBounds(lower, math.inf, zeta, 0.0, nominal)
    lo, hi = 0.0, nominal
    if cap(hi) >= hi:
        upper = hi
    else:
        while hi - lo > 1e-3:
            mid = 0.5 * (lo + hi)
            if cap(mid) >= mid:
                lo = mid
            else:
                hi = mid
        upper = lo
    return ThroughputBounds(lower, upper, zeta, omega(upper), nominal)


# ---------------------------------------------------------------------------
# throughput search


@dataclass(frozen=True)
class ThroughputEstimate:
    value: float
    lo: float
    hi: float
    mode: str
    inconclusive: bool = False
    verdicts: tuple = ()


def throughput_search(p: HighwayParams, policy: PolicyLike, mode: str = "analytic", tol: float = 1.0,
                      replications: int = 5, horizon: float = 200.0, seed: int = 0,
                      bracket: Optional[tuple] = None, max_disagreement: float = 0.2) -> ThroughputEstimate:
    """Largest demand certified (analytic) or observed (empirical) to be stable.

    Analytic mode uses the exact iff for policies that pass the optimality
    check and the sufficient criterion otherwise, so for the uncoordinated
    model it returns a certified lower estimate.
    """
    validate_params(p)
    nominal = nominal_throughput(p)
    verdicts = []
    inconclusive = False

    if mode == "analytic":
        def is_stable(a):
            q = p.replace(a=a)
            pol = _resolve(policy, q)
            if pol.uses_gate and optimality_check(pol, q, 1000).passed:
                return a < nominal
            return stability_criterion(q, pol, grid=2000).stable
    elif mode == "empirical":
        from .sim import ArrivalStream, simulate, divergence_test

        def is_stable(a):
            nonlocal inconclusive
            q = p.replace(a=a)
            pol = _resolve(policy, q)
            flags = []
            for i in range(replications):
                traj = simulate(q, pol, ArrivalStream(seed, q.lam, horizon, i))
                flags.append(divergence_test(traj).stable)
            frac = sum(flags) / len(flags)
            verdicts.append((a, frac))
            if min(frac, 1 - frac) > max_disagreement:
                inconclusive = True
            return frac >= 0.5
    else:
        raise ValueError(f"unknown mode {mode!r}")

    lo, hi = bracket if bracket is not None else (0.0, nominal if mode == "analytic" else 1.5 * nominal)
    if not is_stable(lo):
        return ThroughputEstimate(lo, lo, lo, mode, inconclusive, tuple(verdicts))
    if is_stable(hi):
        return ThroughputEstimate(hi, hi, hi, mode, inconclusive, tuple(verdicts))
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if is_stable(mid):
            lo = mid
        else:
            hi = mid
    return ThroughputEstimate(lo, lo, hi, mode, inconclusive, tuple(verdicts))


# ---------------------------------------------------------------------------
# drift certificates


@dataclass
class DriftReport:
    lyapunov: str
    k: Optional[float]
    beta: Optional[float]
    c: float
    d: float
    worst_state: Optional[State]
    passed: bool
    zeta_munu: float
    radius: float
    weight: float = 1.0
    notes: list = field(default_factory=list)


def invariant_ceiling(policy: Policy, p: HighwayParams) -> float:
    """Ceiling on q2m for the invariant set reached from the zero state."""
    if policy.invariant_ceiling is not None:
        return policy.invariant_ceiling
    return p.Theta


def quadratic_v(q, k: float, theta: float, weight: float = 1.0) -> float:
    """weight (q0m+q1m+q2m)^2/2 + (k (q0m + q1m + q2m^2/(2 Theta)) + q1o) q1o."""
    s = q[0] + q[1] + q[3]
    return 0.5 * weight * s * s + (k * (q[0] + q[1] + q[3] ** 2 / (2.0 * theta)) + q[2]) * q[2]


def _v_parts(q, theta):
    """The three pieces of V that multiply weight, k and 1."""
    s = q[0] + q[1] + q[3]
    return np.array([0.5 * s * s, (q[0] + q[1] + q[3] ** 2 / (2.0 * theta)) * q[2], q[2] * q[2]])


def _v_parts_grad(q, theta):
    s = q[0] + q[1] + q[3]
    w = q[0] + q[1] + q[3] ** 2 / (2.0 * theta)
    return np.array([
        [s, s, 0.0, s],
        [q[2], q[2], w, q[3] * q[2] / theta],
        [0.0, 0.0, 2.0 * q[2], 0.0],
    ])


def _generator_parts(q, p, policy):
    """Generator applied to each piece of V; LV = weight*L0 + k*L1 + L2."""
    st = State(*q)
    u = policy.mu(st)
    g = np.array(field_components(*q, u, p)[:4])
    s = reset_map(st, policy.nu(st), p)
    return _v_parts_grad(q, p.Theta) @ g + p.lam * (_v_parts(s, p.Theta) - _v_parts(q, p.Theta))


def generator_v(q, p: HighwayParams, policy: Policy, k: float, weight: float = 1.0) -> float:
    parts = _generator_parts(np.asarray(q, dtype=float), p, policy)
    return float(weight * parts[0] + k * parts[1] + parts[2])


def _generator_ratio_exp(q, p, policy, beta):
    """(L e^{beta|q|}) / e^{beta|q|}; depends on the region of q only."""
    st = State(*q)
    u = policy.mu(st)
    g = field_components(*q, u, p)[:4]
    s = reset_map(st, policy.nu(st), p)
    jump = sum(s) - sum(q)
    return beta * sum(g) + p.lam * math.expm1(beta * jump)


def k_window(p: HighwayParams, policy: Policy) -> tuple[float, float]:
    """Closed-form range of k for which the off-ramp part of V has negative drift.

    Below the buffer the q1o-slope of LV is k * LHS(q2m) - 2 (R - (1-rho) a),
    which needs k < 2 (R - (1-rho) a) / max LHS. In spillback it is
    -k ((F-R) - load) + 2 (1-rho) a, which needs k > 2 (1-rho) a / ((F-R) - load).
    """
    off = p.offramp_demand
    slack = p.R - off
    cm = (p.F - p.R) - p.mainline_load
    lhs = max(criterion_lhs(x, p, policy) for x in np.linspace(0.0, p.Theta, 401))
    lo = 2.0 * off / cm if cm > 0 else math.inf
    hi = 2.0 * slack / lhs if lhs > 0 else (math.inf if slack > 0 else 0.0)
    return lo, hi


def _levels(p, top, n):
    m = p.platoon_mass
    extra = [0.0, top, top - m, top - m / 2, m, m / 2, top - 1e-6, 1e-6]
    xs = np.concatenate([np.linspace(0.0, top, n), [x for x in extra if 0.0 <= x <= top]])
    return np.unique(xs)


def _rays(p, policy, zeta, n_q2, n_dir):
    """(q2m, base, direction) triples describing the truncated invariant set.

    Each state is base + r * direction with r >= 0; ``direction`` spans the
    unbounded coordinates and has unit 1-norm.
    """
    out = []
    if not policy.uses_gate:
        angles = np.linspace(0.0, 1.0, n_dir)
        for q2 in _levels(p, p.Theta, n_q2):
            out.append((q2, np.array([0.0, 0.0, 1.0, 0.0])))
        for w in angles:
            out.append((p.Theta, np.array([0.0, w, 1.0 - w, 0.0])))
    else:
        for q2 in _levels(p, zeta, n_q2):
            out.append((q2, np.array([1.0, 0.0, 0.0, 0.0])))
    return out


def lyapunov_drift_check(p: HighwayParams, policy: PolicyLike = "zero", which: str = "V",
                         radius: Optional[float] = None, n_q2: int = 200, n_dir: int = 41,
                         n_radial: int = 60, k_grid: Optional[np.ndarray] = None,
                         weight_grid: Optional[np.ndarray] = None,
                         beta_grid: Optional[np.ndarray] = None) -> DriftReport:
    """Search for constants that certify a Foster-Lyapunov drift inequality.

    ``which="V"`` uses the quadratic function
    V = w (q0m+q1m+q2m)^2/2 + (k (q0m + q1m + q2m^2/(2 Theta)) + q1o) q1o
    with g(q) = |q|, searching k and the mainline weight w (w = 1 first).
    ``which="Vtilde"`` uses V = exp(beta |q|) with g(q) = exp(beta |q|).

    The grid covers the invariant set truncated at ``radius`` (default
    50 l/gamma) along its unbounded coordinates. Along every ray of the grid
    the generator is affine in the radius (quadratic V) or a fixed multiple
    of V (exponential V), so c is read off as the worst asymptotic rate over
    rays and d as the maximum of LV + c g over the truncated grid.
    """
    validate_params(p)
    pol = _resolve(policy, p)
    m = p.platoon_mass
    radius = 50.0 * m if radius is None else radius
    zeta = invariant_ceiling(pol, p)
    rays = _rays(p, pol, zeta, n_q2, n_dir)
    radii = np.concatenate([[0.0], np.geomspace(1e-3 * m, radius, n_radial)])
    notes = []

    if which == "V":
        if k_grid is None:
            k_grid = np.geomspace(1e-3, 1e6, 200)
        if weight_grid is None:
            weight_grid = np.concatenate([[1.0], np.geomspace(1.5, 1e4, 40)])
        lo, hi = k_window(p, pol)
        notes.append(f"closed-form k window ({lo:.6g}, {hi:.6g})")
        # per ray: slope of each generator piece between radius and 2*radius
        slopes = []
        for q2, dirn in rays:
            base = np.array([0.0, 0.0, 0.0, q2])
            g1 = _generator_parts(base + radius * dirn, p, pol)
            g2 = _generator_parts(base + 2.0 * radius * dirn, p, pol)
            slopes.append((g2 - g1) / radius)
        slopes = np.array(slopes)
        K, W = np.meshgrid(k_grid, weight_grid, indexing="ij")
        worst = (W[..., None] * slopes[:, 0] + K[..., None] * slopes[:, 1] + slopes[:, 2]).max(axis=-1)
        C = -worst
        # prefer the printed weight when it already works
        if C[:, 0].max() > 0:
            i, j = int(np.argmax(C[:, 0])), 0
        else:
            i, j = np.unravel_index(int(np.argmax(C)), C.shape)
            if C[i, j] > 0:
                notes.append("unit weight on the mainline term admits no k; a larger weight was needed")
        k, weight, c = float(K[i, j]), float(W[i, j]), float(C[i, j])
        c_use = max(c, 0.0)
        worst_v, worst_q = -math.inf, None
        for q2, dirn in rays:
            base = np.array([0.0, 0.0, 0.0, q2])
            for r in radii:
                q = base + r * dirn
                val = generator_v(q, p, pol, k, weight) + c_use * q.sum()
                if val > worst_v:
                    worst_v, worst_q = val, q
        passed = c > 0 and math.isfinite(worst_v)
        return DriftReport("V", k, None, c, float(worst_v), State(*map(float, worst_q)),
                           passed, zeta, radius, weight, notes)

    if which == "Vtilde":
        if beta_grid is None:
            beta_grid = np.geomspace(1e-4 / m, 10.0 / m, 300)
        best = None
        for beta in beta_grid:
            c = math.inf
            for q2, dirn in rays:
                q = np.array([0.0, 0.0, 0.0, q2]) + radius * dirn
                c = min(c, -_generator_ratio_exp(q, p, pol, beta))
            if best is None or c > best[1]:
                best = (beta, c)
        beta, c = best
        c_use = max(c, 0.0)
        worst_v, worst_q = -math.inf, None
        for q2, dirn in rays:
            base = np.array([0.0, 0.0, 0.0, q2])
            for r in radii:
                q = base + r * dirn
                e = math.exp(beta * q.sum())
                val = (_generator_ratio_exp(q, p, pol, beta) + c_use) * e
                if val > worst_v:
                    worst_v, worst_q = val, q
        passed = c > 0 and math.isfinite(worst_v) and zeta < p.Theta
        if zeta >= p.Theta:
            notes.append("invariant ceiling reaches the buffer size")
        return DriftReport("Vtilde", None, float(beta), float(c), float(worst_v),
                           State(*map(float, worst_q)), passed, zeta, radius, 1.0, notes)

    raise ValueError(f"unknown Lyapunov function {which!r}")

