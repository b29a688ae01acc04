"""Run configuration: YAML parsing, validation, defaults and profile sampling.

A configuration file is a YAML mapping with these sections (all optional unless
marked required)::

    domain:  {kind: interval, length: 1.0}         # or {kind: rectangle, lengths: [a, b]}
    grid:    {n: 256, K: 64, m: 128, rule: uniform, grading: 2.0}
    T: 0.5                                         # required for synth
    T_values: [0.05, 0.1, ...]                     # required for sweep and mintime
    eps: 0.1                                       # required
    eps_relative: true                             # eps times ||y_f|| when true
    L: 0.3                                         # required
    y0: {profile: zero}
    yf: {profile: bump, center: 0.5, width: 0.2}   # required
    solver: {method: cutting_plane, tol: 1.0e-8, accept_gap: 1.0e-3, max_iter: 500, patience: 15}
    mintime: {points: [1, 2, 3], lambdas: [], tol: 1.0e-3}
    obstruct: {center: 0.5, radius: 0.15, witness_radius: 0.12, T_values: [...]}
    selftest: {fields: 1000}
    study: synth                                   # optional; must match the subcommand
    output: {dir: results}
    seed: 0

Unknown keys are rejected at every level.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .spectral import Domain, GridField, SpectralBasis


class ConfigError(ValueError):
    """Raised for a missing, malformed or out-of-range configuration entry."""


PROFILES = ("zero", "eigenmode", "bump", "clipped-gaussian", "file")
STUDIES = ("synth", "sweep", "mintime", "obstruct", "selftest")


def _check_keys(section: dict, allowed, where: str) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in {where}; accepted: {sorted(allowed)}")


def _number(value, key: str, low=None, high=None, low_open=False, high_open=False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}")
    v = float(value)
    if not np.isfinite(v):
        raise ConfigError(f"{key} must be finite, got {value!r}")
    if low is not None and (v < low or (low_open and v == low)):
        raise ConfigError(f"{key} must be {'>' if low_open else '>='} {low}, got {value!r}")
    if high is not None and (v > high or (high_open and v == high)):
        raise ConfigError(f"{key} must be {'<' if high_open else '<='} {high}, got {value!r}")
    return v


def _integer(value, key: str, low: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{key} must be an integer, got {value!r}")
    if value < low:
        raise ConfigError(f"{key} must be an integer >= {low}, got {value!r}")
    return int(value)


def _section(raw: dict, key: str) -> dict:
    value = raw.get(key, {})
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"{key} must be a mapping, got {type(value).__name__}")
    return value


def _point(value, key: str, dim: int) -> tuple:
    values = value if isinstance(value, (list, tuple)) else [value]
    if len(values) != dim:
        raise ConfigError(f"{key} must have {dim} coordinate(s), got {value!r}")
    return tuple(_number(v, key) for v in values)


@dataclass(frozen=True)
class ProfileSpec:
    """A named analytic profile or a file of sampled node values."""

    profile: str
    params: dict = field(default_factory=dict)

    def sample(self, basis: SpectralBasis, base_dir: Path | None = None) -> GridField:
        dom = basis.domain
        pts = dom.points()
        p = self.params
        if self.profile == "zero":
            return GridField(dom, np.zeros(dom.size))
        if self.profile == "eigenmode":
            index = p.get("index", 1)
            if index > basis.size:
                raise ConfigError(f"eigenmode index must be <= K modes ({basis.size}), got {index}")
            return GridField(dom, p.get("amplitude", 1.0) * basis.phi[index - 1].copy())
        if self.profile in ("bump", "clipped-gaussian"):
            center = np.asarray(p["center"], dtype=float)
            r = np.linalg.norm(pts - center[None, :], axis=1) / p["width"]
            out = np.zeros(dom.size)
            if self.profile == "bump":
                inside = r < 1.0
                out[inside] = np.exp(1.0 - 1.0 / (1.0 - r[inside] ** 2))
            else:
                inside = r < p.get("cutoff", 3.0)
                out[inside] = np.exp(-0.5 * r[inside] ** 2)
            return GridField(dom, p.get("height", 1.0) * out)
        if self.profile == "file":
            path = Path(p["path"])
            if not path.is_absolute() and base_dir is not None:
                path = base_dir / path
            if not path.exists():
                raise ConfigError(f"profile file not found: {path}")
            values = np.load(path) if path.suffix == ".npy" else np.loadtxt(path, delimiter=",", ndmin=1)
            values = np.asarray(values, dtype=float).ravel()
            if values.size != dom.size:
                raise ConfigError(f"profile file {path} has {values.size} values, grid has {dom.size}")
            return GridField(dom, values)
        raise ConfigError(f"unknown profile {self.profile!r}")


def _profile(raw, key: str, dim: int) -> ProfileSpec:
    if not isinstance(raw, dict) or "profile" not in raw:
        raise ConfigError(f"{key} must be a mapping with a 'profile' entry; accepted profiles: {list(PROFILES)}")
    name = raw["profile"]
    if name not in PROFILES:
        raise ConfigError(f"{key}.profile must be one of {list(PROFILES)}, got {name!r}")
    allowed = {
        "zero": (),
        "eigenmode": ("index", "amplitude"),
        "bump": ("center", "width", "height"),
        "clipped-gaussian": ("center", "width", "height", "cutoff"),
        "file": ("path",),
    }[name]
    params = {k: v for k, v in raw.items() if k != "profile"}
    _check_keys(params, allowed, key)
    out: dict = {}
    if name == "eigenmode":
        out["index"] = _integer(params.get("index", 1), f"{key}.index", 1)
        out["amplitude"] = _number(params.get("amplitude", 1.0), f"{key}.amplitude")
    elif name in ("bump", "clipped-gaussian"):
        if "center" not in params or "width" not in params:
            raise ConfigError(f"{key} needs 'center' and 'width'")
        out["center"] = list(_point(params["center"], f"{key}.center", dim))
        out["width"] = _number(params["width"], f"{key}.width", 0.0, low_open=True)
        out["height"] = _number(params.get("height", 1.0), f"{key}.height")
        if name == "clipped-gaussian":
            out["cutoff"] = _number(params.get("cutoff", 3.0), f"{key}.cutoff", 0.0, low_open=True)
    elif name == "file":
        if not isinstance(params.get("path"), str):
            raise ConfigError(f"{key}.path must be a string")
        out["path"] = params["path"]
    return ProfileSpec(name, out)


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration with defaults applied."""

    domain_kind: str = "interval"
    lengths: tuple = (1.0,)
    n: int = 256
    K: int = 64
    m: int = 128
    rule: str = "uniform"
    grading: float = 2.0
    T: float | None = None
    T_values: tuple = ()
    eps: float = 0.1
    eps_relative: bool = True
    L: float = 0.3
    y0: ProfileSpec = ProfileSpec("zero")
    yf: ProfileSpec = ProfileSpec("zero")
    solver: dict = field(default_factory=dict)
    mintime: dict = field(default_factory=dict)
    obstruct: dict = field(default_factory=dict)
    selftest: dict = field(default_factory=dict)
    study: str | None = None
    output_dir: str = "results"
    seed: int = 0
    base_dir: str = "."

    def domain(self) -> Domain:
        return Domain(self.domain_kind, self.lengths, self.n)

    def canonical(self) -> dict:
        """Every setting that influences results; the output location is left out."""
        data = asdict(self)
        data.pop("output_dir")
        data.pop("base_dir")
        return data

    def hash(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


SOLVER_KEYS = {
    "method": str,
    "tol": float,
    "accept_gap": float,
    "tol_feas": float,
    "max_iter": int,
    "patience": int,
    "check_resolution": bool,
}


def _solver(raw: dict) -> dict:
    _check_keys(raw, SOLVER_KEYS, "solver")
    out = {}
    for key, value in raw.items():
        kind = SOLVER_KEYS[key]
        if kind is str:
            if value not in ("cutting_plane", "subgradient"):
                raise ConfigError(f"solver.method must be 'cutting_plane' or 'subgradient', got {value!r}")
            out[key] = value
        elif kind is int:
            out[key] = _integer(value, f"solver.{key}", 1)
        elif kind is bool:
            if not isinstance(value, bool):
                raise ConfigError(f"solver.{key} must be true or false")
            out[key] = value
        else:
            out[key] = _number(value, f"solver.{key}", 0.0, low_open=True)
    return out


def _times(value, key: str) -> tuple:
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"{key} must be a non-empty list of positive times")
    ts = tuple(_number(v, f"{key}[{i}]", 0.0, low_open=True) for i, v in enumerate(value))
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise ConfigError(f"{key} must be strictly increasing")
    return ts


def validate(raw: dict, base_dir: Path | str = ".") -> RunConfig:
    """Turn a parsed mapping into a :class:`RunConfig`; errors name the offending key."""
    if not isinstance(raw, dict):
        raise ConfigError("the configuration must be a mapping")
    top = {
        "domain", "grid", "T", "T_values", "eps", "eps_relative", "L", "y0", "yf", "solver",
        "mintime", "obstruct", "selftest", "study", "output", "seed",
    }
    _check_keys(raw, top, "the top level")
    for key in ("eps", "L", "yf"):
        if key not in raw:
            raise ConfigError(f"missing required key {key!r}")

    dom_raw = _section(raw, "domain")
    _check_keys(dom_raw, {"kind", "length", "lengths"}, "domain")
    kind = dom_raw.get("kind", "interval")
    if kind == "interval":
        if "lengths" in dom_raw:
            raise ConfigError("domain.lengths is for rectangles; use domain.length")
        lengths = (_number(dom_raw.get("length", 1.0), "domain.length", 0.0, low_open=True),)
    elif kind == "rectangle":
        if "length" in dom_raw:
            raise ConfigError("domain.length is for intervals; use domain.lengths")
        ls = dom_raw.get("lengths", [1.0, 1.0])
        if not isinstance(ls, (list, tuple)) or len(ls) != 2:
            raise ConfigError("domain.lengths must be a list of two positive numbers")
        lengths = tuple(_number(v, "domain.lengths", 0.0, low_open=True) for v in ls)
    else:
        raise ConfigError(f"domain.kind must be 'interval' or 'rectangle', got {kind!r}")
    dim = len(lengths)

    grid = _section(raw, "grid")
    _check_keys(grid, {"n", "K", "m", "rule", "grading"}, "grid")
    n = _integer(grid.get("n", 256 if dim == 1 else 64), "grid.n", 8)
    K = _integer(grid.get("K", min(64, n // 2)), "grid.K", 1)
    if K > n // 2:
        raise ConfigError(f"grid.K must be <= n/2 = {n // 2}, got {K}")
    m = _integer(grid.get("m", 128), "grid.m", 16)
    rule = grid.get("rule", "uniform")
    if rule not in ("uniform", "graded"):
        raise ConfigError(f"grid.rule must be 'uniform' or 'graded', got {rule!r}")
    grading = _number(grid.get("grading", 2.0), "grid.grading", 1.0)

    T = _number(raw["T"], "T", 0.0, low_open=True) if "T" in raw else None
    T_values = _times(raw["T_values"], "T_values") if "T_values" in raw else ()
    eps = _number(raw["eps"], "eps", 0.0, low_open=True)
    rel = raw.get("eps_relative", True)
    if not isinstance(rel, bool):
        raise ConfigError("eps_relative must be true or false")
    if not isinstance(raw["L"], (int, float)) or isinstance(raw["L"], bool) or not (0.0 < float(raw["L"]) < 1.0):
        raise ConfigError(f"L must lie in (0,1), got {raw['L']!r}")
    L = float(raw["L"])
    y0 = _profile(raw.get("y0", {"profile": "zero"}), "y0", dim)
    yf = _profile(raw["yf"], "yf", dim)

    solver = _solver(_section(raw, "solver"))

    mt = _section(raw, "mintime")
    _check_keys(mt, {"points", "lambdas", "tol"}, "mintime")
    mintime = {
        "points": [_integer(v, "mintime.points", 0) for v in mt.get("points", [1, 2, 3])],
        "lambdas": [_number(v, "mintime.lambdas", 0.0, low_open=True) for v in mt.get("lambdas", [])],
        "tol": _number(mt.get("tol", 1e-3), "mintime.tol", 0.0, 0.5, low_open=True),
    }

    ob = _section(raw, "obstruct")
    _check_keys(ob, {"center", "radius", "witness_radius", "T_values", "witness_T", "max_columns"}, "obstruct")
    obstruct: dict = {}
    if ob:
        for key in ("center", "radius", "witness_radius"):
            if key not in ob:
                raise ConfigError(f"missing required key 'obstruct.{key}'")
        obstruct["center"] = list(_point(ob["center"], "obstruct.center", dim))
        obstruct["radius"] = _number(ob["radius"], "obstruct.radius", 0.0, low_open=True)
        obstruct["witness_radius"] = _number(
            ob["witness_radius"], "obstruct.witness_radius", 0.0, obstruct["radius"], True, True
        )
        obstruct["T_values"] = list(_times(ob.get("T_values", [0.01, 0.02, 0.05]), "obstruct.T_values"))
        if "witness_T" in ob:
            obstruct["witness_T"] = list(_times(ob["witness_T"], "obstruct.witness_T"))
        obstruct["max_columns"] = _integer(ob.get("max_columns", 300), "obstruct.max_columns", 1)

    st = _section(raw, "selftest")
    _check_keys(st, {"fields"}, "selftest")
    selftest = {"fields": _integer(st.get("fields", 1000), "selftest.fields", 1)}

    study = raw.get("study")
    if study is not None and study not in STUDIES:
        raise ConfigError(f"study must be one of {list(STUDIES)}, got {study!r}")
    out = _section(raw, "output")
    _check_keys(out, {"dir"}, "output")
    seed = _integer(raw.get("seed", 0), "seed", 0)
    if seed >= 2**64:
        raise ConfigError("seed must fit in 64 bits")
    return RunConfig(
        kind, lengths, n, K, m, rule, grading, T, T_values, eps, rel, L, y0, yf, solver, mintime,
        obstruct, selftest, study, str(out.get("dir", "results")), seed, str(base_dir),
    )


def parse_config(path: str | Path) -> RunConfig:
    """Read and validate a YAML configuration file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"configuration file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed configuration {path}: {exc}") from exc
    return validate(raw if raw is not None else {}, path.parent)


def default_config() -> RunConfig:
    """Desk-scale instance: bump target on the unit interval."""
    return validate({
        "T": 0.5,
        "eps": 0.1,
        "L": 0.3,
        "yf": {"profile": "bump", "center": 0.5, "width": 0.2},
    })
