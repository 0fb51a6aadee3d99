"""Preset experiments: sweeps, convergence and dominance studies.

Every preset writes one CSV with a one-line header, the resolved
configuration (``config.txt``), the tool version (``VERSION``) and a verdict
log (``summary.txt``, one PASS/FAIL line per assertion). Floats are written
with ``repr`` so that reruns with the same config are byte-identical.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .ctm import build_ctm, headway_sweep, validation_params
from .model import HighwayParams, TOL
from .policies import headway_regulation, min_bottleneck_headway, zero_policy
from .queueing import mean_total_queue
from .sim import coupled_simulate, dominance_gap, metrics, replication_streams, simulate
from .stability import invariant_ceiling, uncontrolled_bounds

OUTPUT_ROOT_ENV = "PLATOONFLUID_OUTPUT_ROOT"


@dataclass(frozen=True)
class Assertion:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


@dataclass
class PresetResult:
    preset: str
    output_dir: Path
    files: list = field(default_factory=list)
    assertions: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)

    def summary(self) -> str:
        return "".join(a.line() + "\n" for a in self.assertions)


def output_dir_for(config: ExperimentConfig, out: Optional[str] = None) -> Path:
    """``out``, else the config's output_dir, else <output root>/<preset>."""
    if out:
        return Path(out)
    if config.output_dir:
        return Path(config.output_dir)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "results")) / config.preset


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def _csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(x) if isinstance(x, float) else str(x) for x in row) + "\n")


# ---------------------------------------------------------------- bounds sweeps


def _bounds_rows(points: Sequence[HighwayParams], labels: Sequence[float]) -> list:
    rows = []
    for x, q in zip(labels, points):
        b = uncontrolled_bounds(q)
        rows.append((float(x), float(b.lower), float(b.upper), float(b.nominal)))
    return rows


def _ordering(rows) -> Assertion:
    bad = [r[0] for r in rows if not (r[1] <= r[2] + 1e-6 and r[2] <= r[3] + 1e-6)]
    return Assertion("bound-ordering", not bad,
                     "lower <= upper <= nominal at every grid point" if not bad else f"violated at {bad}")


def eta_sweep(config: ExperimentConfig, out: Path) -> list:
    p = config.params
    rows = _bounds_rows([p.replace(eta=e) for e in config.grid], config.grid)
    _csv(out / "eta_sweep.csv", ("eta", "lower", "upper", "nominal"), rows)
    checks = [_ordering(rows)]
    ref = uncontrolled_bounds(p)
    hit = [r for r in rows if math.isclose(r[0], p.eta, abs_tol=1e-12)]
    if hit:
        r = hit[0]
        ok = math.isclose(r[1], ref.lower) and math.isclose(r[2], ref.upper)
        checks.append(Assertion("matches-direct-bounds", ok,
                                f"eta={p.eta!r}: lower {r[1]:.2f}, upper {r[2]:.2f}"))
    return checks


def size_sweep(config: ExperimentConfig, out: Path) -> list:
    # a single CAV is not a platoon: l = 1 is evaluated without platooning
    p = config.params
    pts = [p.replace(l=float(l), eta=0.0 if l == 1 else p.eta) for l in config.grid]
    rows = _bounds_rows(pts, config.grid)
    _csv(out / "size_sweep.csv", ("l", "lower", "upper", "nominal"), rows)
    lowers = [r[1] for r in rows]
    i = int(np.argmax(lowers))
    interior = 0 < i < len(rows) - 1
    return [_ordering(rows), Assertion("interior-optimal-size", interior,
                                       f"lower bound is largest at l={rows[i][0]!r}")]


def buffer_sweep(config: ExperimentConfig, out: Path) -> list:
    p = config.params
    rows = _bounds_rows([p.replace(Theta=t) for t in config.grid], config.grid)
    _csv(out / "buffer_sweep.csv", ("Theta", "lower", "upper", "nominal"), rows)
    checks = [_ordering(rows)]
    big = max(rows, key=lambda r: r[0])
    if big[0] >= 1e6:
        ok = abs(big[1] - big[3]) <= 0.01 * big[3] and abs(big[2] - big[3]) <= 0.01 * big[3]
        checks.append(Assertion("large-buffer-asymptote", ok,
                                f"Theta={big[0]!r}: lower {big[1]:.2f}, upper {big[2]:.2f}, a* {big[3]:.2f}"))
    return checks


# ---------------------------------------------------------------- simulation presets


def convergence(config: ExperimentConfig, out: Path) -> list:
    """Time-average total queue under headway regulation vs its closed form."""
    p = config.params
    pol = headway_regulation(p)
    streams = replication_streams(config.seed, p.lam, config.horizon, config.replications)
    avgs = _map(lambda s: metrics(simulate(p, pol, s)).time_avg_total_queue, streams, config.workers)
    rows = [(i, float(v)) for i, v in enumerate(avgs)]
    _csv(out / "convergence.csv", ("replication", "time_avg_total_queue"), rows)
    target = mean_total_queue(p)
    mean = float(np.mean(avgs))
    ok = abs(mean - target) <= 0.05 * target
    return [Assertion("mean-queue", ok, f"mean {mean:.6f} vs closed form {target:.6f} (5% tolerance)")]


def dominance(config: ExperimentConfig, out: Path) -> list:
    """Coupled paths: regulated total queue never exceeds the uncontrolled one."""
    p = config.params
    opt, zero = headway_regulation(p), zero_policy(p)
    ceiling = invariant_ceiling(opt, p)
    streams = replication_streams(config.seed, p.lam, config.horizon, config.replications)

    def one(s):
        ta, tb = coupled_simulate(p, opt, zero, s)
        both = np.vstack([ta.before, ta.after])
        return (dominance_gap(ta, tb), float(both[:, 1].max()), float(both[:, 2].max()),
                float(both[:, 3].max()))

    res = _map(one, streams, config.workers)
    rows = [(i, *map(float, r)) for i, r in enumerate(res)]
    _csv(out / "dominance.csv", ("replication", "dominance_gap", "max_q1m", "max_q1o", "max_q2m"), rows)
    gap = max(r[1] for r in rows)
    inv = all(r[2] <= TOL and r[3] <= TOL and r[4] <= ceiling + TOL for r in rows)
    return [
        Assertion("sample-path-dominance", gap <= 1e-9, f"max gap {gap!r} over {len(rows)} paths"),
        Assertion("invariant-set", inv and ceiling < p.Theta,
                  f"q1m = q1o = 0 and q2m <= {ceiling:.6f} < Theta={p.Theta!r}"),
    ]


def headway_sweep_preset(config: ExperimentConfig, out: Path) -> list:
    """CTM mean VHT against the minimum inter-platoon headway."""
    fp = validation_params(config.params)
    c = build_ctm(fp)
    seeds = range(config.seed, config.seed + config.replications)
    sw = headway_sweep(c, config.grid, seeds, config.horizon, config.workers)
    sw.to_csv(out / "headway_sweep.csv")
    w_hr = float(round(min_bottleneck_headway(fp) * 3600.0, 6))
    best = sw.best_headway
    interior = best not in (min(sw.headways), max(sw.headways))
    checks = [Assertion("interior-minimizer", interior and 20.0 <= best <= 45.0,
                        f"mean VHT is smallest at {best!r} s")]
    if w_hr in sw.headways:
        ratio = sw.improvement_ratio_at(w_hr)
        checks.append(Assertion("improvement-ratio", ratio >= 0.70,
                                f"ratio {ratio:.3f} at the theoretical headway {w_hr!r} s"))
        coord = sw.blocked_by_headway[w_hr]
        rows = [(s, int(b0), int(b1)) for s, b0, b1 in zip(sw.seeds, sw.blocked_none, coord)]
        _csv(out / "blockage.csv", ("seed", "blocked_uncoordinated", "blocked_coordinated"), rows)
        share = float(np.mean([b0 and not b1 for b0, b1 in zip(sw.blocked_none, coord)]))
        checks.append(Assertion("offramp-blockage", share >= 0.80,
                                f"blocked only when uncoordinated on {share:.0%} of seeds"))
    else:
        checks.append(Assertion("improvement-ratio", False, f"theoretical headway {w_hr!r} s not on the grid"))
    return checks


PRESET_RUNNERS = {
    "eta-sweep": eta_sweep,
    "size-sweep": size_sweep,
    "buffer-sweep": buffer_sweep,
    "headway-sweep": headway_sweep_preset,
    "convergence": convergence,
    "dominance": dominance,
}


def run_preset(config: ExperimentConfig, out: Optional[str] = None) -> PresetResult:
    """Run ``config.preset`` and write its outputs; see the module docstring."""
    if config.preset not in PRESET_RUNNERS:
        raise ValueError(f"unknown preset {config.preset!r}")
    path = output_dir_for(config, out)
    path.mkdir(parents=True, exist_ok=True)
    (path / "config.txt").write_text(config.render())
    (path / "VERSION").write_text(f"platoonfluid {__version__}\n")
    res = PresetResult(config.preset, path)
    res.assertions = PRESET_RUNNERS[config.preset](config, path)
    (path / "summary.txt").write_text(res.summary())
    res.files = sorted(str(f) for f in path.iterdir())
    return res
