"""YAML run configurations: schema, validation and bundled defaults."""
from __future__ import annotations

import copy
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .grid import SIDES, BoundaryTag
from .integrators import Scheme
from .scenarios import DECAY_TABLE, decay_chain
from .splitting import SplitScheme

SCENARIOS = ("layered", "two_phase", "convergence", "custom")


class ConfigError(ValueError):
    """Parse or validation failure; ``violations`` lists every problem found."""

    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)


def _num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _choice(options):
    return lambda v: v in options


# key -> (default, check, constraint text)
_SCHEMA = {
    "grid": {
        "nx": (64, lambda v: _int(v) and v >= 1, "integer >= 1"),
        "ny": (64, lambda v: _int(v) and v >= 1, "integer >= 1"),
        "domain": ([0.0, 100.0, 0.0, 100.0],
                   lambda v: isinstance(v, list) and len(v) == 4 and all(map(_num, v))
                   and v[1] > v[0] and v[3] > v[2],
                   "[xmin, xmax, ymin, ymax] with positive extents"),
        "boundary": ({"left": "neumann", "right": "neumann", "top": "neumann", "bottom": "outflow"},
                     lambda v: isinstance(v, dict) and set(v) <= set(SIDES)
                     and all(t in [b.value for b in BoundaryTag] for t in v.values()),
                     "mapping of left/right/bottom/top to dirichlet, neumann or outflow"),
    },
    "model": {
        "phi": (0.333, lambda v: _num(v) and 0 < v <= 1, "in (0, 1]"),
        "g": (1e-3, lambda v: _num(v) and v >= 0, ">= 0"),
        "k_alpha": (5e-4, lambda v: _num(v) and v >= 0, ">= 0"),
        "retardation": (1.0, lambda v: _num(v) and v > 0, "> 0"),
        "henry_rate": (10.0e-4, lambda v: _num(v) and v >= 0, ">= 0"),
        "density": (1.0, lambda v: _num(v) and v > 0, "> 0"),
        "decay_row": ("third", _choice(tuple(DECAY_TABLE)), f"one of {sorted(DECAY_TABLE)}"),
        "decay": (None, lambda v: v is None or (
            isinstance(v, list) and len(v) > 0 and all(isinstance(r, list) and len(r) == len(v)
                                                        and all(map(_num, r)) for r in v)
            and all(v[i][i] >= 0 for i in range(len(v)))),
            "null or a square matrix with non-negative diagonal"),
        "velocity": ([0.0, -4e-3], lambda v: isinstance(v, list) and len(v) == 2 and all(map(_num, v)),
                     "[vx, vy]"),
        "layers": ([{"y": [0.0, 20.0], "diffusion": 1e-3}, {"y": [20.0, 40.0], "diffusion": 1e-5},
                    {"y": [40.0, 60.0], "diffusion": 1e-3}, {"y": [60.0, 80.0], "diffusion": 1e-5},
                    {"y": [80.0, 100.0], "diffusion": 1e-3}],
                   lambda v: isinstance(v, list) and len(v) > 0 and all(
                       isinstance(b, dict) and set(b) == {"y", "diffusion"} and isinstance(b["y"], list)
                       and len(b["y"]) == 2 and all(map(_num, b["y"])) and b["y"][1] > b["y"][0]
                       and _num(b["diffusion"]) and b["diffusion"] >= 0 for b in v),
                   "list of {y: [lo, hi], diffusion: D >= 0}"),
        "initial_value": (0.0, _num, "a finite number"),
    },
    "split": {
        "scheme": ("iterative", _choice([s.value for s in SplitScheme]),
                   f"one of {[s.value for s in SplitScheme]}"),
        "sigma": (0.5, lambda v: _num(v) and 0 <= v <= 1, "sigma must be in [0,1]"),
        "iterations": (2, lambda v: _int(v) and v >= 1, "integer >= 1"),
        "err_tol": (1e-4, lambda v: _num(v) and v > 0, "> 0"),
        "max_iter": (100, lambda v: _int(v) and v >= 1, "integer >= 1"),
        "inner_scheme": ("trapezoidal", _choice([s.value for s in Scheme]),
                         f"one of {[s.value for s in Scheme]}"),
        "inner_substeps": (1, lambda v: _int(v) and v >= 1, "integer >= 1"),
        "initial_iterate": ("zero", _choice(("zero", "frozen")), "'zero' or 'frozen'"),
        "cfl_max": (1.0, lambda v: _num(v) and v > 0, "> 0"),
        "dt_init": (500.0, lambda v: _num(v) and v > 0, "> 0"),
        "tau": (None, lambda v: v is None or (_num(v) and v > 0), "null or > 0"),
        "limiter": ("none", _choice(("none", "minmod")), "'none' or 'minmod'"),
        "n_steps": (150, lambda v: _int(v) and v >= 1, "integer >= 1"),
    },
    "benchmark": {
        "I": (50, lambda v: _int(v) and v >= 2, "integer >= 2"),
        "D": (0.0, lambda v: _num(v) and v >= 0, ">= 0"),
        "v": (4e-3, lambda v: _num(v) and v >= 0, ">= 0"),
        "dx": (2.0, lambda v: _num(v) and v > 0, "> 0"),
        "lambda1": (0.25e-3, lambda v: _num(v) and v >= 0, ">= 0"),
        "lambda2": (0.5e-3, lambda v: _num(v) and v >= 0, ">= 0"),
        "g": (0.01, lambda v: _num(v) and v >= 0, ">= 0"),
        "tau": (100.0, lambda v: _num(v) and v > 0, "> 0"),
        "n_steps": (10, lambda v: _int(v) and v >= 1, "integer >= 1"),
        "k_max": (6, lambda v: _int(v) and v >= 1, "integer >= 1"),
        "inner_dt": (5.0, lambda v: _num(v) and v > 0, "> 0"),
        "inner_scheme": ("trapezoidal", _choice([s.value for s in Scheme]),
                         f"one of {[s.value for s in Scheme]}"),
        "initial_iterate": ("zero", _choice(("zero", "frozen")), "'zero' or 'frozen'"),
    },
    "study": {
        "size": (8, lambda v: _int(v) and v >= 1, "integer >= 1"),
        "seed": (0, _int, "an integer"),
        "T": (1.0, lambda v: _num(v) and v > 0, "> 0"),
        "taus": ([0.2, 0.1, 0.05, 0.025, 0.0125],
                 lambda v: isinstance(v, list) and len(v) >= 3 and all(map(_num, v)) and all(
                     math.isclose(b, a / 2, rel_tol=1e-9) for a, b in zip(v, v[1:])) and v[-1] > 0,
                 "at least 3 positive step sizes, each half the previous"),
        "mode": ("global", _choice(("global", "local")), "'global' or 'local'"),
        "cases": ([{"scheme": "unsplit", "iterations": 1, "initial_iterate": "zero"},
                   {"scheme": "iterative", "iterations": 1, "initial_iterate": "frozen"},
                   {"scheme": "iterative", "iterations": 2, "initial_iterate": "frozen"},
                   {"scheme": "iterative", "iterations": 3, "initial_iterate": "frozen"}],
                  lambda v: isinstance(v, list) and len(v) > 0 and all(
                      isinstance(c, dict) and c.get("scheme") in [s.value for s in SplitScheme]
                      and _int(c.get("iterations", 1)) and c.get("iterations", 1) >= 1
                      and c.get("initial_iterate", "zero") in ("zero", "frozen")
                      and set(c) <= {"scheme", "iterations", "initial_iterate", "sigma", "name"}
                      for c in v),
                  "list of {scheme, iterations, initial_iterate}"),
        "inner_scheme": ("trapezoidal", _choice([s.value for s in Scheme]),
                         f"one of {[s.value for s in Scheme]}"),
    },
    "output": {
        "dir": ("out", lambda v: isinstance(v, str) and v != "", "a non-empty path"),
        "snapshot_steps": ([2, 150], lambda v: isinstance(v, list) and all(_int(s) and s >= 0 for s in v),
                           "list of step indices >= 0"),
    },
}

_SECTIONS = {
    "layered": ("grid", "model", "sources", "split", "output"),
    "custom": ("grid", "model", "sources", "split", "output"),
    "two_phase": ("benchmark", "output"),
    "convergence": ("study", "output"),
}

_DEFAULT_SOURCES = [{"x": 30.0, "y": 75.0, "species": 0, "total": 2.0e4, "duration": 2.0e4},
                    {"x": 50.0, "y": 75.0, "species": 0, "total": 2.0e4, "duration": 2.0e4},
                    {"x": 70.0, "y": 75.0, "species": 0, "total": 2.0e4, "duration": 2.0e4}]


@dataclass
class RunConfig:
    scenario: str
    grid: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    sources: list = field(default_factory=list)
    split: dict = field(default_factory=dict)
    benchmark: dict = field(default_factory=dict)
    study: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    source_path: str | None = field(default=None, compare=False)

    def to_dict(self) -> dict:
        out = {"scenario": self.scenario}
        for name in _SECTIONS[self.scenario]:
            out[name] = copy.deepcopy(getattr(self, name))
        return out

    def n_species(self) -> int:
        if self.model.get("decay") is not None:
            return len(self.model["decay"])
        return decay_chain(self.model.get("decay_row", "third")).shape[0]


def _check_section(name, raw, violations):
    schema = _SCHEMA[name]
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        violations.append(f"{name}: must be a mapping")
        return {k: copy.deepcopy(d) for k, (d, _, _) in schema.items()}
    for key in raw:
        if key not in schema:
            violations.append(f"{name}.{key}: unknown key")
    out = {}
    for key, (default, check, text) in schema.items():
        value = raw.get(key, copy.deepcopy(default))
        if isinstance(value, int) and not isinstance(value, bool) and isinstance(default, float):
            value = float(value)
        if not check(value):
            violations.append(f"{name}.{key}: {text} (got {value!r})")
        out[key] = value
    return out


def _check_sources(raw, n_species, grid, violations):
    if raw is None:
        return []
    if not isinstance(raw, list):
        violations.append("sources: must be a list")
        return []
    keys = {"x", "y", "species", "total", "duration"}
    out = []
    for i, s in enumerate(raw):
        where = f"sources[{i}]"
        if not isinstance(s, dict):
            violations.append(f"{where}: must be a mapping")
            continue
        if set(s) != keys:
            violations.append(f"{where}: needs exactly the keys {sorted(keys)}")
            continue
        if not all(map(_num, (s["x"], s["y"], s["total"], s["duration"]))):
            violations.append(f"{where}: x, y, total and duration must be numbers")
            continue
        if not _int(s["species"]) or not 0 <= s["species"] < n_species:
            violations.append(f"{where}.species: integer in [0, {n_species})")
        if s["duration"] <= 0:
            violations.append(f"{where}.duration: > 0")
        if s["total"] < 0:
            violations.append(f"{where}.total: >= 0")
        dom = grid.get("domain")
        if isinstance(dom, list) and len(dom) == 4 and all(map(_num, dom)):
            if not (dom[0] <= s["x"] <= dom[1] and dom[2] <= s["y"] <= dom[3]):
                violations.append(f"{where}: position ({s['x']}, {s['y']}) outside the domain")
        out.append({k: (float(v) if k != "species" else v) for k, v in s.items()})
    return out


def _check_layers(model, grid, violations):
    layers = model.get("layers")
    dom = grid.get("domain")
    if not (isinstance(layers, list) and isinstance(dom, list) and len(dom) == 4):
        return
    try:
        spans = sorted((float(b["y"][0]), float(b["y"][1])) for b in layers)
    except (TypeError, KeyError, IndexError):
        return
    if not (math.isclose(spans[0][0], dom[2]) and math.isclose(spans[-1][1], dom[3])):
        violations.append(f"model.layers: must cover y in [{dom[2]}, {dom[3]}]")
    for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
        if not math.isclose(a1, b0):
            violations.append(f"model.layers: [{a0}, {a1}] and [{b0}, {b1}] overlap or leave a gap")


def validate(data, source_path=None) -> RunConfig:
    """Build a :class:`RunConfig` from a parsed mapping, reporting all violations."""
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping at the top level")
    violations = []
    scenario = data.get("scenario")
    if scenario not in SCENARIOS:
        raise ConfigError(f"scenario: must be one of {list(SCENARIOS)} (got {scenario!r})",
                          [f"scenario: must be one of {list(SCENARIOS)}"])
    allowed = set(_SECTIONS[scenario]) | {"scenario"}
    for key in data:
        if key not in allowed:
            violations.append(f"{key}: not used by scenario {scenario!r}")
    cfg = RunConfig(scenario, source_path=source_path)
    for name in _SECTIONS[scenario]:
        if name != "sources":
            setattr(cfg, name, _check_section(name, data.get(name), violations))
    if "sources" in _SECTIONS[scenario]:
        n = 1
        try:
            n = cfg.n_species()
        except (ValueError, TypeError):
            pass
        raw = data.get("sources", copy.deepcopy(_DEFAULT_SOURCES) if scenario == "layered" else [])
        cfg.sources = _check_sources(raw, n, cfg.grid, violations)
        _check_layers(cfg.model, cfg.grid, violations)
        steps = cfg.output.get("snapshot_steps")
        if isinstance(steps, list) and _int(cfg.split.get("n_steps")):
            late = [s for s in steps if _int(s) and s > cfg.split["n_steps"]]
            if late:
                violations.append(f"output.snapshot_steps: {late} exceed split.n_steps")
    if violations:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(violations), violations)
    return cfg


class _Loader(yaml.SafeLoader):
    pass


# accept 1e-3 and 2.0e4 as floats (YAML 1.1 insists on a dot and an exponent sign)
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                   |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
                   |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
                   |[-+]?\.(?:inf|Inf|INF)
                   |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."))


def load_yaml(text: str, source="<string>"):
    try:
        data = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}:{mark.column + 1}" if mark else source
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(f"{where}: YAML parse error: {problem}") from exc
    if data is None:
        raise ConfigError(f"{source}: configuration file is empty")
    return data


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read configuration: {exc.strerror}") from exc
    return validate(load_yaml(text, str(path)), str(path))


def emit_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)


def bundled_config(name: str) -> Path:
    """Path of a bundled configuration, e.g. ``layered_default``."""
    res = resources.files("poroheat") / "configs" / f"{name}.yaml"
    if not res.is_file():
        available = sorted(p.name[:-5] for p in (resources.files("poroheat") / "configs").iterdir()
                           if p.name.endswith(".yaml"))
        raise ConfigError(f"no bundled config {name!r}; available: {available}")
    return Path(str(res))
