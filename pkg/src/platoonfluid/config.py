"""Flat key-value experiment configuration.

Grammar, one entry per line::

    # comment
    key = value        # trailing comments are allowed

Keys are case-sensitive and may appear once. Values are numbers, bare words,
or comma-separated number lists (for ``grid`` and ``seeds``). Blank lines are
ignored. Defaults are layered: built-in defaults, then the preset's own
defaults, then the file, then command-line flags.

Keys and defaults:

    preset        eta-sweep   one of PRESETS
    seed          0           base seed; replication i uses substream i
    replications  preset      number of seeds per point
    horizon       preset      simulated hours per replication
    grid          preset      sweep grid (comma list)
    output_dir    ""          empty means <output root>/<preset>
    workers       1           threads for independent replications
    F R eta gamma l rho Theta a v0 h L1 L2
                  nominal     fluid-model parameters (a defaults to 2500)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Optional

from .model import HighwayParams, ParameterError, validate_params

PRESETS = {
    "eta-sweep": dict(grid=tuple(round(0.05 * i, 2) for i in range(21)), replications=1, horizon=0.0),
    "size-sweep": dict(grid=tuple(float(i) for i in range(1, 11)), replications=1, horizon=0.0),
    "buffer-sweep": dict(grid=(5.0, 10.0, 20.0, 30.0, 40.0, 50.0, 75.0, 100.0, 150.0, 200.0, 1e6),
                         replications=1, horizon=0.0),
    "headway-sweep": dict(grid=(0.0, 10.0, 20.0, 30.0, 36.0, 45.0, 60.0), replications=20, horizon=2.25),
    "convergence": dict(grid=(), replications=20, horizon=2000.0),
    "dominance": dict(grid=(), replications=100, horizon=100.0),
}

PRESET_NOTES = {
    "eta-sweep": "uncontrolled throughput bounds and nominal throughput vs platooning ratio eta",
    "size-sweep": "bounds and nominal throughput vs platoon size l (l = 1 uses eta = 0)",
    "buffer-sweep": "bounds and nominal throughput vs buffer size Theta",
    "headway-sweep": "CTM mean VHT vs minimum inter-platoon headway (s)",
    "convergence": "time-average total queue under headway regulation vs closed form",
    "dominance": "coupled paths: optimal policy total queue never above uncontrolled",
}

PARAM_KEYS = tuple(f.name for f in fields(HighwayParams))
INT_KEYS = ("seed", "replications", "workers")
FLOAT_KEYS = ("horizon",)
KNOWN = ("preset", "grid", "output_dir") + INT_KEYS + FLOAT_KEYS + PARAM_KEYS


class ConfigError(ValueError):
    """Raised with a ``line:column: message`` diagnostic."""

    def __init__(self, line: int, col: int, msg: str):
        super().__init__(f"{line}:{col}: {msg}")
        self.line = line
        self.col = col
        self.msg = msg


@dataclass(frozen=True)
class ExperimentConfig:
    preset: str = "eta-sweep"
    params: HighwayParams = field(default_factory=HighwayParams)
    grid: tuple = ()
    replications: int = 1
    seed: int = 0
    horizon: float = 0.0
    output_dir: str = ""
    workers: int = 1

    def render(self) -> str:
        """Resolved configuration in the same grammar the parser reads."""
        lines = [
            f"preset = {self.preset}",
            f"seed = {self.seed}",
            f"replications = {self.replications}",
            f"horizon = {self.horizon!r}",
            f"output_dir = {self.output_dir}",
            f"workers = {self.workers}",
        ]
        if self.grid:
            lines.insert(4, "grid = " + ", ".join(repr(float(g)) for g in self.grid))
        lines += [f"{k} = {getattr(self.params, k)!r}" for k in PARAM_KEYS]
        return "\n".join(lines) + "\n"


def _strip_comment(s: str) -> str:
    i = s.find("#")
    return s if i < 0 else s[:i]


def _number(text: str, line: int, col: int, kind=float):
    try:
        v = float(text)
    except ValueError:
        raise ConfigError(line, col, f"expected a number, got {text!r}") from None
    if not math.isfinite(v):
        raise ConfigError(line, col, f"value must be finite, got {text!r}")
    if kind is int:
        if v != int(v):
            raise ConfigError(line, col, f"expected an integer, got {text!r}")
        return int(v)
    return v


def parse_entries(text: str) -> dict:
    """Parse ``text`` into {key: (value, line, column of value)}."""
    out = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        body = _strip_comment(raw)
        if not body.strip():
            continue
        if "=" not in body:
            col = len(body) - len(body.lstrip()) + 1
            raise ConfigError(ln, col, "expected 'key = value'")
        eq = body.index("=")
        key = body[:eq].strip()
        kcol = len(body[:eq]) - len(body[:eq].lstrip()) + 1
        if not key:
            raise ConfigError(ln, kcol, "missing key before '='")
        if key not in KNOWN:
            raise ConfigError(ln, kcol, f"unknown key {key!r}")
        if key in out:
            raise ConfigError(ln, kcol, f"duplicate key {key!r} (first set on line {out[key][1]})")
        rest = body[eq + 1:]
        vcol = eq + 2 + len(rest) - len(rest.lstrip())
        value = rest.strip()
        if not value and key != "output_dir":
            raise ConfigError(ln, vcol, f"missing value for {key!r}")
        out[key] = (value, ln, vcol)
    return out


def parse_config(text: str, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Strict parse of a flat key-value config with layered defaults.

    ``overrides`` (from command-line flags) take precedence over the file and
    use the same keys with already-typed values.
    """
    entries = parse_entries(text)
    preset = entries.get("preset", ("eta-sweep", 0, 0))
    if preset[0] not in PRESETS:
        raise ConfigError(preset[1], preset[2], f"unknown preset {preset[0]!r}; choose from {', '.join(PRESETS)}")
    name = preset[0]
    if overrides and overrides.get("preset") is not None:
        name = overrides["preset"]
        if name not in PRESETS:
            raise ConfigError(0, 0, f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    layer = dict(PRESETS[name])
    kw = dict(preset=name, grid=layer["grid"], replications=layer["replications"], horizon=layer["horizon"])
    pkw = {}
    where = {}
    for key, (value, ln, col) in entries.items():
        where[key] = (ln, col)
        if key == "preset":
            continue
        if key == "grid":
            items = [x.strip() for x in value.split(",")]
            if any(not x for x in items):
                raise ConfigError(ln, col, "empty item in grid list")
            kw["grid"] = tuple(_number(x, ln, col) for x in items)
        elif key == "output_dir":
            kw["output_dir"] = value
        elif key in INT_KEYS:
            kw[key] = _number(value, ln, col, int)
        elif key in FLOAT_KEYS:
            kw[key] = _number(value, ln, col)
        else:
            pkw[key] = _number(value, ln, col)
    for key, value in (overrides or {}).items():
        if key == "preset" or value is None:
            continue
        if key in PARAM_KEYS:
            pkw[key] = value
        else:
            kw[key] = value
    if kw["replications"] < 1:
        raise ConfigError(*where.get("replications", (0, 0)), "replications must be at least 1")
    if kw.get("workers", 1) < 1:
        raise ConfigError(*where.get("workers", (0, 0)), "workers must be at least 1")
    if kw["horizon"] < 0:
        raise ConfigError(*where.get("horizon", (0, 0)), "horizon must be non-negative")
    if kw.get("seed", 0) < 0:
        raise ConfigError(*where.get("seed", (0, 0)), "seed must be non-negative")
    params = HighwayParams().replace(**pkw) if pkw else HighwayParams()
    try:
        validate_params(params)
    except ParameterError as e:
        # point at the first offending key present in the file, if any
        ln, col = next((where[k] for k in PARAM_KEYS if k in where and k in str(e)), (0, 0))
        raise ConfigError(ln, col, str(e)) from None
    return ExperimentConfig(params=params, **kw)


def load_config(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read(), overrides)
