"""Scenario configuration: a sectioned ``key = value`` text format with line-precise validation.

Example::

    [grid]
    n = 1
    r = 2.0
    N = 129

    [potential]
    kind = quartic_bump
    a = 0.5

    [flow]
    T_end = 0.01
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .potentials import CATALOG

METRIC_EXPRESSIONS = ("identity", "conformal_quadratic")


class ConfigError(ValueError):
    """Malformed or invalid configuration; the message names the line and key."""


# section -> key -> (parser, default); default None means required
def _int(s: str) -> int:
    return int(s)


def _float(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("value must be finite")
    return v


def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _vector(s: str) -> np.ndarray:
    v = np.array([_float(p) for p in s.replace(",", " ").split()])
    if v.size == 0:
        raise ValueError("empty vector")
    return v


def _matrix(s: str) -> np.ndarray:
    rows = [r for r in s.split(";") if r.strip()]
    m = np.array([[_float(p) for p in r.replace(",", " ").split()] for r in rows])
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("matrix must be square, rows separated by ';'")
    return m


def _theta_hat(s: str):
    if s in ("average", "zero"):
        return s
    return _float(s)


def _str(s: str) -> str:
    return s


_REQUIRED = object()

SCHEMA: dict[str, dict[str, tuple]] = {
    "grid": {
        "n": (_int, _REQUIRED),
        "r": (_float, _REQUIRED),
        "r_prime": (_float, 1.0),
        "N": (_int, _REQUIRED),
        "bc": (_str, "one-sided"),
    },
    "metric": {
        "kind": (_str, "expression"),
        "matrix": (_matrix, None),
        "expression": (_str, "identity"),
        "eps": (_float, 0.1),
    },
    "potential": {
        "kind": (_str, "flat"),
        "A": (_matrix, None),
        "b": (_float, 0.0),
        "a": (_float, 1.0),
        "w": (_float, 0.5),
        "k": (_int, 1),
        "amp": (_float, 0.1),
    },
    "flow": {
        "theta_hat": (_theta_hat, "average"),
        "cfl": (_float, 0.4),
        "dt": (_float, None),
        "T_end": (_float, 0.01),
        "cadence": (_int, 1),
        "A": (_float, 1e6),
        "scheme": (_str, "euler"),
    },
    "identities": {
        "x0": (_vector, None),
        "interior_width": (_int, 4),
        "f_radius": (_float, None),
        "alpha": (_float, -2.5),
    },
    "density": {
        "x0": (_vector, None),
        "T_prime": (_float, None),
        "variant": (_str, "cutoff_paper"),
        "j": (_int, 1),
        "stride": (_int, 1),
    },
    "shrinker": {
        "t_start": (_float, -1.0),
        "t_end": (_float, -0.25),
        "samples": (_int, 4),
        "tol": (_float, 1e-6),
    },
    "knorm": {
        "alpha": (_float, 0.5),
        "points_per_axis": (_int, 3),
        "time_stride": (_int, 1),
    },
    "ensemble": {
        "members": (_int, 10),
        "include_flat": (_bool, True),
        "a_min": (_float, 0.2),
        "a_max": (_float, 1.0),
        "w_min": (_float, 0.4),
        "w_max": (_float, 0.6),
    },
}

OPTIONAL_SECTIONS = ("identities", "density", "shrinker", "knorm", "ensemble")


@dataclass
class ScenarioConfig:
    sections: dict[str, dict] = field(default_factory=dict)
    present: set[str] = field(default_factory=set)
    source: str = ""

    def __getitem__(self, section: str) -> dict:
        return self.sections[section]

    def has(self, section: str) -> bool:
        return section in self.present

    @property
    def digest(self) -> str:
        """SHA-256 of the raw configuration text."""
        return hashlib.sha256(self.source.encode("utf-8")).hexdigest()


def _raw_sections(text: str) -> dict[str, dict[str, tuple[str, int]]]:
    raw: dict[str, dict[str, tuple[str, int]]] = {}
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if s.startswith("["):
            if not s.endswith("]"):
                raise ConfigError(f"line {lineno}: malformed section header {s!r}")
            current = s[1:-1].strip()
            if current not in SCHEMA:
                raise ConfigError(f"line {lineno}: unknown section [{current}]")
            if current in raw:
                raise ConfigError(f"line {lineno}: duplicate section [{current}]")
            raw[current] = {}
            continue
        if "=" not in s:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if current is None:
            raise ConfigError(f"line {lineno}: key outside any section")
        key, value = (p.strip() for p in s.split("=", 1))
        if key not in SCHEMA[current]:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in [{current}]")
        if key in raw[current]:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} in [{current}]")
        raw[current][key] = (value, lineno)
    return raw


def parse_config_text(text: str) -> ScenarioConfig:
    raw = _raw_sections(text)
    if "grid" not in raw:
        raise ConfigError("missing section [grid]")
    cfg = ScenarioConfig(source=text, present=set(raw))
    lines: dict[tuple[str, str], int] = {}
    for section, schema in SCHEMA.items():
        values = {}
        given = raw.get(section, {})
        for key, (parse, default) in schema.items():
            if key in given:
                value, lineno = given[key]
                lines[(section, key)] = lineno
                try:
                    values[key] = parse(value)
                except ValueError as exc:
                    raise ConfigError(f"line {lineno}: [{section}] {key}: {exc}") from None
            elif default is _REQUIRED:
                raise ConfigError(f"[{section}]: missing required key {key!r}")
            else:
                values[key] = default
        cfg.sections[section] = values
    _validate(cfg, lines)
    return cfg


def parse_config(path) -> ScenarioConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config_text(text)


def _validate(cfg: ScenarioConfig, lines: dict) -> None:
    def fail(section: str, key: str, msg: str):
        where = f"line {lines[(section, key)]}: " if (section, key) in lines else ""
        raise ConfigError(f"{where}[{section}] {key}: {msg}")

    grid = cfg["grid"]
    n = grid["n"]
    if n not in (1, 2, 3):
        fail("grid", "n", "must be 1, 2 or 3")
    if grid["N"] < 8:
        fail("grid", "N", "resolution too small (N >= 8)")
    for key in ("r", "r_prime"):
        if grid[key] <= 0:
            fail("grid", key, "must be positive")
    if grid["bc"] not in ("one-sided", "periodic"):
        fail("grid", "bc", "must be 'one-sided' or 'periodic'")

    metric = cfg["metric"]
    if metric["kind"] == "constant":
        m = metric["matrix"]
        if m is None:
            fail("metric", "kind", "constant metric needs 'matrix'")
        if m.shape != (n, n):
            fail("metric", "matrix", f"expected {n}x{n}")
        if not np.array_equal(m, m.T):
            fail("metric", "matrix", "must be symmetric")
        if np.linalg.eigvalsh(m)[0] <= 0:
            fail("metric", "matrix", "must be positive definite")
    elif metric["kind"] == "expression":
        if metric["expression"] not in METRIC_EXPRESSIONS:
            fail("metric", "expression", f"unknown expression; catalog: {', '.join(METRIC_EXPRESSIONS)}")
    else:
        fail("metric", "kind", "must be 'constant' or 'expression'")

    pot = cfg["potential"]
    if pot["kind"] not in CATALOG:
        fail("potential", "kind", f"unknown expression; catalog: {', '.join(CATALOG)}")
    if pot["kind"] == "quadratic":
        A = pot["A"]
        if A is None:
            fail("potential", "kind", "quadratic potential needs 'A'")
        if A.shape != (n, n):
            fail("potential", "A", f"expected {n}x{n}")
        if not np.array_equal(A, A.T):
            fail("potential", "A", "must be symmetric")
    if pot["w"] <= 0:
        fail("potential", "w", "must be positive")

    flow = cfg["flow"]
    if flow["A"] <= 0:
        fail("flow", "A", "maxF guard must be positive")
    if flow["cfl"] <= 0:
        fail("flow", "cfl", "must be positive")
    if flow["T_end"] <= 0:
        fail("flow", "T_end", "must be positive")
    if flow["dt"] is not None and flow["dt"] <= 0:
        fail("flow", "dt", "must be positive")
    if flow["cadence"] < 1:
        fail("flow", "cadence", "must be >= 1")
    if flow["scheme"] not in ("euler", "rk2"):
        fail("flow", "scheme", "must be 'euler' or 'rk2'")

    for section in ("identities", "density"):
        x0 = cfg[section]["x0"]
        if x0 is not None and x0.size != n:
            fail(section, "x0", f"expected {n} coordinates")
    if cfg["density"]["variant"] not in ("cutoff_paper", "cutoff_j", "infinity"):
        fail("density", "variant", "unknown variant")
    if cfg["density"]["stride"] < 1:
        fail("density", "stride", "must be >= 1")
    if cfg["identities"]["alpha"] >= 0:
        fail("identities", "alpha", "must be negative")
    sh = cfg["shrinker"]
    if not sh["t_start"] < sh["t_end"] < 0:
        fail("shrinker", "t_end", "need t_start < t_end < 0")
    if sh["samples"] < 2:
        fail("shrinker", "samples", "must be >= 2")
    kn = cfg["knorm"]
    if not 0 < kn["alpha"] < 1:
        fail("knorm", "alpha", "must lie in (0, 1)")
    if kn["points_per_axis"] < 1 or kn["time_stride"] < 1:
        fail("knorm", "points_per_axis", "lattice parameters must be >= 1")
    ens = cfg["ensemble"]
    if ens["members"] < 1:
        fail("ensemble", "members", "must be >= 1")
    if not 0 < ens["w_min"] <= ens["w_max"]:
        fail("ensemble", "w_max", "need 0 < w_min <= w_max")
    if ens["a_min"] > ens["a_max"]:
        fail("ensemble", "a_max", "need a_min <= a_max")
