"""M/D/1 and fluid-queue analytics.

The total mainline content of the uncontrolled fluid model, measured in
platoon units and rounded up, is an M/D/1 queue with arrival rate lambda and
service time s = l / (gamma * (F - R - (1 - eta) rho a)). Everything here is a
closed form or a short numerical recursion around that fact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath
import numpy as np

from .model import HighwayParams, nominal_throughput


class UnstableQueueError(ValueError):
    """Raised when a steady-state quantity is requested at utilization >= 1."""


@dataclass(frozen=True)
class Md1Spec:
    lam: float
    s: float

    def __post_init__(self):
        if self.lam < 0 or not math.isfinite(self.lam):
            raise ValueError(f"arrival rate must be non-negative, got {self.lam!r}")
        if self.s <= 0 or not math.isfinite(self.s):
            raise ValueError(f"service time must be positive, got {self.s!r}")

    @property
    def utilization(self) -> float:
        return self.lam * self.s

    @classmethod
    def from_params(cls, p: HighwayParams) -> "Md1Spec":
        return cls(p.lam, service_time(p))

    @classmethod
    def from_utilization(cls, u: float, s: float = 1.0) -> "Md1Spec":
        return cls(u / s, s)


def service_time(p: HighwayParams) -> float:
    """Time for the bottleneck to clear one platoon's effective mass (hr)."""
    d = p.drain_rate
    if d <= 0:
        raise ValueError(
            f"drain rate F - R - (1-eta) rho a = {d!r} is not positive; "
            "background traffic alone saturates the bottleneck"
        )
    return p.l / (p.gamma * d)


def _require_stable(spec: Md1Spec) -> float:
    u = spec.utilization
    if u >= 1.0:
        raise UnstableQueueError(f"utilization {u!r} >= 1 has no steady state")
    return u


def _pi_terms(u: float, n: int) -> list[float]:
    """Summands of the alternating closed form for pi_n / (1 - u), n >= 2."""
    terms = [math.exp(n * u)]
    for k in range(1, n):
        j = n - k
        ku = k * u
        lead = math.exp(k * u) * (-1.0) ** j
        # (ku)^j / j! + (ku)^(j-1) / (j-1)!, evaluated in log space
        a = math.exp(j * math.log(ku) - math.lgamma(j + 1))
        b = math.exp((j - 1) * math.log(ku) - math.lgamma(j))
        terms.append(lead * (a + b))
    return terms


def _pi_formula(u: float, n: int) -> tuple[float, float]:
    """Closed-form pi_n and an estimate of its absolute rounding error."""
    if n == 0:
        return 1.0 - u, 0.0
    if n == 1:
        return (1.0 - u) * math.expm1(u), 0.0
    terms = _pi_terms(u, n)
    total = math.fsum(terms)
    err = 4 * n * np.finfo(float).eps * max(abs(t) for t in terms)
    return (1.0 - u) * total, (1.0 - u) * err


def _pi_exact(u: float, n: int, dps: int = 60) -> float:
    with mpmath.workdps(dps + n):
        U = mpmath.mpf(u)
        if n == 0:
            return float(1 - U)
        if n == 1:
            return float((1 - U) * mpmath.expm1(U))
        acc = mpmath.exp(n * U)
        for k in range(1, n):
            j = n - k
            ku = k * U
            acc += mpmath.exp(k * U) * (-1) ** j * (
                ku**j / mpmath.factorial(j) + ku ** (j - 1) / mpmath.factorial(j - 1)
            )
        return float((1 - U) * acc)


def md1_distribution(spec: Md1Spec, nmax: int) -> np.ndarray:
    """Stationary probabilities pi_0..pi_nmax via the embedded departure chain.

    With a_k = e^{-u} u^k / k! the departure-epoch balance equations give
    pi_{j+1} = (pi_j - pi_0 a_j - sum_{i=1}^{j} pi_i a_{j+1-i}) / a_0.
    By PASTA and level crossing the departure distribution equals the
    time-average one, so these are the time-stationary probabilities too.
    """
    u = _require_stable(spec)
    pi = np.zeros(nmax + 1)
    pi[0] = 1.0 - u
    if nmax == 0 or u == 0.0:
        return pi
    k = np.arange(nmax + 2)
    with np.errstate(divide="ignore"):
        logs = -u + k * math.log(u) - np.array([math.lgamma(x + 1) for x in k])
    a = np.exp(logs)
    a0 = a[0]
    for j in range(nmax):
        conv = np.dot(pi[1 : j + 1], a[j:0:-1]) if j > 0 else 0.0
        # deep-tail terms are below round-off; keep them non-negative
        pi[j + 1] = max((pi[j] - pi[0] * a[j] - conv) / a0, 0.0)
    return pi


def md1_pi(spec: Md1Spec, n: int, method: str = "auto") -> float:
    """Steady-state probability of n platoons in the M/D/1 system.

    ``method`` is "formula" (alternating closed form, compensated sum),
    "recursion" (embedded chain), "exact" (closed form in multiprecision)
    or "auto", which keeps the closed form while its estimated cancellation
    error stays below 1e-13 and otherwise falls back to the recursion.
    """
    if n < 0 or int(n) != n:
        raise ValueError(f"n must be a non-negative integer, got {n!r}")
    n = int(n)
    u = _require_stable(spec)
    if u == 0.0:
        return 1.0 if n == 0 else 0.0
    if method == "exact":
        return _pi_exact(u, n)
    if method == "recursion":
        return float(md1_distribution(spec, n)[n])
    if method not in ("formula", "auto"):
        raise ValueError(f"unknown method {method!r}")
    value, err = _pi_formula(u, n)
    if method == "formula" or err < 1e-13:
        return value
    return float(md1_distribution(spec, n)[n])


def md1_mean_waiting(spec: Md1Spec) -> float:
    """Pollaczek-Khinchine mean number waiting, u^2 / (2 (1 - u))."""
    u = _require_stable(spec)
    return u * u / (2.0 * (1.0 - u))


def _decay_root(u: float) -> float:
    """Root z > 1 of exp(u (z - 1)) = z; the M/D/1 tail decays like z^-n."""
    lo, hi = 1.0 + 1e-15, 2.0
    f = lambda z: u * (z - 1.0) - math.log(z)
    while f(hi) < 0:
        hi *= 2.0
    # f < 0 just above 1 because u < 1
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def md1_tail(spec: Md1Spec, K: int, nmax: int = 4000) -> float:
    """P(N > K) for the stationary M/D/1 queue.

    Computed as the complement of the recursion's partial sums when K is
    within ``nmax``; beyond that the geometric tail pi_n ~ C z^-n is
    extrapolated from the last computed term.
    """
    u = _require_stable(spec)
    if u == 0.0:
        return 0.0
    if K < 0:
        return 1.0
    n = min(K, nmax)
    pi = md1_distribution(spec, n)
    tail = max(0.0, 1.0 - math.fsum(pi))
    if K <= nmax:
        return tail
    r = 1.0 / _decay_root(u)
    # tail above n is ~ pi_n r / (1 - r); shift it down by K - n steps
    return min(tail, pi[n] * r / (1.0 - r)) * r ** (K - n)


def truncation_index(p: HighwayParams, rounding: str = "ceil") -> int:
    x = p.gamma * p.Theta / p.l
    if rounding == "ceil":
        return math.ceil(x - 1e-12)
    if rounding == "floor":
        return math.floor(x + 1e-12)
    if rounding == "round":
        return int(math.floor(x + 0.5))
    raise ValueError(f"unknown rounding {rounding!r}")


def spillback_lower_bound(p: HighwayParams, rounding: str = "ceil") -> float:
    """omega = 1 - sum_{n <= K} pi_n with K = ceil(gamma Theta / l) by default."""
    if p.lam == 0.0:
        return 0.0
    spec = Md1Spec.from_params(p)
    K = truncation_index(p, rounding)
    return min(1.0, max(0.0, md1_tail(spec, K)))


def mean_total_queue(p: HighwayParams) -> float:
    """Long-run time average of |Q| under a throughput-optimal policy (veh)."""
    if p.a >= nominal_throughput(p):
        raise UnstableQueueError(f"demand {p.a!r} is not below the nominal throughput")
    x = p.eta * p.rho * p.a
    first = x * p.l / (2.0 * p.gamma**2 * p.drain_rate)
    slack = p.F - p.R - p.mainline_load
    return first * (x / (p.gamma * slack) + 1.0)


def md1_occupancy(lam: float, s: float, n_arrivals: int, rng: np.random.Generator, nmax: int = 200) -> np.ndarray:
    """Time-average distribution of the number in system of a simulated M/D/1 queue.

    Departures follow the Lindley recursion D_i = max(A_i, D_{i-1}) + s. The
    system starts empty and the returned vector covers 0..nmax (mass above
    nmax is folded into the last bin).
    """
    gaps = rng.exponential(1.0 / lam, n_arrivals)
    arr = np.cumsum(gaps)
    # D_i = s i + max_{j <= i} (A_j - s (j - 1)), 1-based
    idx = np.arange(1, n_arrivals + 1)
    dep = s * idx + np.maximum.accumulate(arr - s * (idx - 1))
    horizon = arr[-1]
    times = np.concatenate([arr, dep[dep <= horizon]])
    steps = np.concatenate([np.ones(arr.size), -np.ones(int((dep <= horizon).sum()))])
    order = np.argsort(times, kind="stable")
    times, steps = times[order], steps[order]
    level = np.cumsum(steps).astype(np.int64)
    dur = np.diff(np.concatenate([[0.0], times, [horizon]]))
    levels = np.concatenate([[0], level])
    occ = np.bincount(np.minimum(levels, nmax), weights=dur, minlength=nmax + 1)
    return occ / occ.sum()
