"""Scenario configuration files.

INI syntax with one section per concern; every value is a Python literal
(numbers, tuples, lists, dicts, quoted strings, True/False/None). Bare words
are accepted for string-valued keys. Parsing is strict: unknown sections or
keys and missing required ones are errors.

Example::

    [mesh]
    generator = disc
    params = {"radius": 1.0, "resolution": 9, "center": (1.2, 0.0)}

    [time]
    T = 2.0
    L = 64
"""

from __future__ import annotations

import ast
import configparser
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import geometry
from .material import MaterialParams
from .record import CheckSettings
from .stepper import Scenario


class ConfigError(ValueError):
    pass


_REQ = object()
_num = (int, float)

# section -> key -> (accepted types, default); _REQ marks required keys
SCHEMA: dict[str, dict[str, tuple]] = {
    "mesh": {
        "generator": ((str,), _REQ),
        "params": ((dict,), {}),
        "file": ((str, type(None)), None),
        "pin_box": ((tuple, list, type(None)), None),
    },
    "material": {k: (_num, v) for k, v in MaterialParams().to_dict().items()},
    "obstacles": {
        "items": ((list,), []),
    },
    "initial": {
        "offset": ((tuple, list), (0.0, 0.0)),
        "position_file": ((str, type(None)), None),
        "velocity": ((tuple, list), (0.0, 0.0)),
        "velocity_gradient": ((tuple, list, type(None)), None),
        "velocity_file": ((str, type(None)), None),
    },
    "forcing": {
        "gravity": ((tuple, list), (0.0, 0.0)),
    },
    "time": {
        "T": (_num, _REQ),
        "L": ((int,), _REQ),
        "M": ((int,), 8),
        "tau_max": (_num + (type(None),), None),
    },
    "solver": {
        "mu0": (_num, 1e-6),
        "mu_factor": (_num, 0.1),
        "mu_min": (_num, 1e-10),
        "tol_kkt": (_num, 1e-8),
        "eps_act": (_num, 0.02),
        "max_newton": ((int,), 60),
        "max_enlarge": ((int,), 6),
        "max_split": ((int,), 4),
        "fraction_to_boundary": (_num, 0.01),
        "armijo": (_num, 1e-4),
        "topo_cutoff": ((int,), 3),
        "polish": (_num, 1e-3),
    },
    "output": {
        "name": ((str, type(None)), None),
        "directory": ((str, type(None)), None),
        "frame_stride": ((int,), 1),
        "svg": ((bool,), False),
        "r_cn": ((int,), 512),
    },
    "checks": {
        "theta_tol": (_num, 5.0),
        "delta_opp": (_num, 0.1),
        "rebound": ((bool,), False),
    },
}
OPTIONAL_SECTIONS = {"checks"}
STRING_KEYS = {k for sec in SCHEMA.values() for k, (types, _) in sec.items() if str in types}

GENERATORS = {
    "disc": geometry.disc,
    "rectangle": geometry.rectangle,
    "annulus": geometry.annulus,
    "bent_strip": geometry.bent_strip,
    "two_discs": geometry.two_discs,
}


def _literal(key: str, raw: str):
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        if key in STRING_KEYS and raw and "\n" not in raw:
            return raw
        raise ConfigError(f"cannot parse value for {key!r}: {raw!r}") from None


def _check_type(section, key, value):
    types, _ = SCHEMA[section][key]
    if isinstance(value, bool) and bool not in types:
        raise ConfigError(f"[{section}] {key} must be numeric, got a boolean")
    if float in types and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, types):
        names = "/".join(t.__name__ for t in types)
        raise ConfigError(f"[{section}] {key} must be {names}, got {type(value).__name__}")
    return value


@dataclass
class ScenarioConfig:
    """Parsed configuration: ``values[section][key]`` with defaults filled in."""

    values: dict
    source: str | None = None

    def __getitem__(self, section):
        return self.values[section]

    def __eq__(self, other):
        return isinstance(other, ScenarioConfig) and self.values == other.values

    def to_text(self) -> str:
        out = []
        for section in SCHEMA:
            if section not in self.values:
                continue
            out.append(f"[{section}]")
            for key in SCHEMA[section]:
                out.append(f"{key} = {self.values[section][key]!r}")
            out.append("")
        return "\n".join(out)

    def with_overrides(self, overrides) -> "ScenarioConfig":
        """Apply ``{"section.key": "literal"}`` overrides (values as text)."""
        vals = {s: dict(v) for s, v in self.values.items()}
        for dotted, raw in dict(overrides).items():
            if "." not in dotted:
                raise ConfigError(f"override {dotted!r} must look like section.key")
            section, key = dotted.split(".", 1)
            if section not in SCHEMA or key not in SCHEMA[section]:
                raise ConfigError(f"unknown override {dotted!r}")
            vals.setdefault(section, {k: d for k, (_, d) in SCHEMA[section].items()})
            vals[section][key] = _check_type(section, key, _literal(key, str(raw)) if isinstance(raw, str) else raw)
        cfg = ScenarioConfig(vals, self.source)
        cfg.validate()
        return cfg

    @property
    def name(self) -> str:
        if self.values["output"]["name"]:
            return self.values["output"]["name"]
        return Path(self.source).stem if self.source else "scenario"

    def validate(self):
        t = self.values["time"]
        if not t["T"] > 0:
            raise ConfigError("[time] T must be positive")
        if t["L"] < 1 or t["M"] < 1:
            raise ConfigError("[time] L and M must be at least 1")
        if t["tau_max"] is not None and not t["tau_max"] > 0:
            raise ConfigError("[time] tau_max must be positive")
        o = self.values["output"]
        if o["frame_stride"] < 1:
            raise ConfigError("[output] frame_stride must be at least 1")
        if o["r_cn"] < 64:
            raise ConfigError("[output] r_cn must be at least 64")
        s = self.values["solver"]
        if not 0 < s["mu_factor"] < 1:
            raise ConfigError("[solver] mu_factor must lie in (0, 1)")
        if not 0 < s["mu_min"] <= s["mu0"]:
            raise ConfigError("[solver] need 0 < mu_min <= mu0")
        if not 0 < s["fraction_to_boundary"] < 1:
            raise ConfigError("[solver] fraction_to_boundary must lie in (0, 1)")
        for k in ("tol_kkt", "eps_act", "polish", "armijo"):
            if not s[k] > 0:
                raise ConfigError(f"[solver] {k} must be positive")
        if self.values["mesh"]["generator"] not in set(GENERATORS) | {"file"}:
            raise ConfigError(f"[mesh] unknown generator {self.values['mesh']['generator']!r}")
        if self.values["mesh"]["generator"] == "file" and not self.values["mesh"]["file"]:
            raise ConfigError("[mesh] generator = file needs a file")
        if self.values["checks"]["theta_tol"] <= 0:
            raise ConfigError("[checks] theta_tol must be positive")
        for key in ("offset", "velocity"):
            v = self.values["initial"][key]
            if not (_is_pair(v) or (key == "velocity" and isinstance(v, list) and all(map(_is_pair, v)))):
                raise ConfigError(f"[initial] {key} must be a pair of numbers"
                                  + (" or a list of pairs" if key == "velocity" else ""))
        if not _is_pair(self.values["forcing"]["gravity"]):
            raise ConfigError("[forcing] gravity must be a pair of numbers")
        try:
            MaterialParams(**self.values["material"])
        except ValueError as exc:
            raise ConfigError(f"[material] {exc}") from None


def _is_pair(v) -> bool:
    return isinstance(v, (tuple, list)) and len(v) == 2 and all(
        isinstance(c, _num) and not isinstance(c, bool) for c in v)


def parse_config(text: str, source: str | None = None) -> ScenarioConfig:
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"),
                                   inline_comment_prefixes=None, strict=True, empty_lines_in_values=False)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source or "<config>")
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    unknown = set(cp.sections()) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown sections: {sorted(unknown)}")
    missing = set(SCHEMA) - OPTIONAL_SECTIONS - set(cp.sections())
    if missing:
        raise ConfigError(f"missing sections: {sorted(missing)}")
    values = {}
    for section, schema in SCHEMA.items():
        given = dict(cp[section]) if cp.has_section(section) else {}
        bad = set(given) - set(schema)
        if bad:
            raise ConfigError(f"[{section}] unknown keys: {sorted(bad)}")
        sec = {}
        for key, (_, default) in schema.items():
            if key in given:
                sec[key] = _check_type(section, key, _literal(key, given[key].strip()))
            elif default is _REQ:
                raise ConfigError(f"[{section}] missing required key {key!r}")
            else:
                sec[key] = default
        values[section] = sec
    cfg = ScenarioConfig(values, source)
    cfg.validate()
    return cfg


def load_config(path) -> ScenarioConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {p}: {exc}") from None
    return parse_config(text, str(p))


def _resolve(path: str, cfg: ScenarioConfig) -> Path:
    p = Path(path)
    if not p.is_absolute() and cfg.source:
        p = Path(cfg.source).parent / p
    return p


def build_mesh(cfg: ScenarioConfig) -> geometry.ReferenceMesh:
    m = cfg["mesh"]
    try:
        if m["generator"] == "file":
            mesh = geometry.read_mesh(_resolve(m["file"], cfg))
        else:
            mesh = GENERATORS[m["generator"]](**m["params"])
    except (TypeError, OSError, geometry.MeshError) as exc:
        raise ConfigError(f"[mesh] {exc}") from None
    if m["pin_box"] is not None:
        box = m["pin_box"]
        if len(box) != 4:
            raise ConfigError("[mesh] pin_box must be (xmin, ymin, xmax, ymax)")
        V = mesh.vertices
        pins = np.flatnonzero((V[:, 0] >= box[0]) & (V[:, 1] >= box[1]) & (V[:, 0] <= box[2]) & (V[:, 1] <= box[3]))
        if pins.size == 0:
            raise ConfigError("[mesh] pin_box selects no vertices")
        mesh = mesh.with_dirichlet(np.union1d(mesh.dirichlet_vertices, pins))
    return mesh


def _initial_velocity(cfg: ScenarioConfig, mesh) -> np.ndarray:
    ini = cfg["initial"]
    if ini["velocity_file"]:
        v = np.loadtxt(_resolve(ini["velocity_file"], cfg), delimiter=",", ndmin=2)
        if v.shape != (mesh.n_vertices, 2):
            raise ConfigError("[initial] velocity_file has the wrong shape")
        return v
    comp = mesh.vertex_component
    vel = ini["velocity"]
    if isinstance(vel, list):
        if len(vel) != comp.max() + 1:
            raise ConfigError("[initial] velocity list needs one pair per body")
        v = np.asarray(vel, dtype=float)[comp]
    else:
        v = np.broadcast_to(np.asarray(vel, dtype=float), (mesh.n_vertices, 2)).copy()
    if ini["velocity_gradient"] is not None:
        A = np.asarray(ini["velocity_gradient"], dtype=float)
        if A.shape != (2, 2):
            raise ConfigError("[initial] velocity_gradient must be a 2x2 matrix")
        w = mesh.lumped_area
        for c in range(comp.max() + 1):
            sel = comp == c
            centroid = (w[sel, None] * mesh.vertices[sel]).sum(0) / w[sel].sum()
            v[sel] += (mesh.vertices[sel] - centroid) @ A.T
    return v


def build_scenario(cfg: ScenarioConfig) -> Scenario:
    mesh = build_mesh(cfg)
    ini = cfg["initial"]
    if ini["position_file"]:
        x0 = np.loadtxt(_resolve(ini["position_file"], cfg), delimiter=",", ndmin=2)
        if x0.shape != (mesh.n_vertices, 2):
            raise ConfigError("[initial] position_file has the wrong shape")
    else:
        x0 = mesh.vertices + np.asarray(ini["offset"], dtype=float)
    try:
        obstacles = [geometry.obstacle_from_dict(d) for d in cfg["obstacles"]["items"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"[obstacles] {exc}") from None
    t = cfg["time"]
    M = t["M"]
    if t["tau_max"] is not None:
        M = max(M, math.ceil(t["T"] / t["L"] / t["tau_max"] - 1e-12))
    solver = dict(cfg["solver"])
    max_split = solver.pop("max_split")
    return Scenario(
        name=cfg.name, mesh=mesh, material=MaterialParams(**cfg["material"]), x0=x0,
        v0=_initial_velocity(cfg, mesh), T=float(t["T"]), L=t["L"], M=M, obstacles=obstacles,
        gravity=tuple(float(g) for g in cfg["forcing"]["gravity"]), frame_stride=cfg["output"]["frame_stride"],
        solver=solver, theta_tol=cfg["checks"]["theta_tol"], delta_opp=cfg["checks"]["delta_opp"],
        r_cn=cfg["output"]["r_cn"], max_split=max_split,
    )


def check_settings(cfg: ScenarioConfig) -> CheckSettings:
    c = cfg["checks"]
    return CheckSettings(float(c["theta_tol"]), float(c["delta_opp"]), bool(c["rebound"]))


def bundled_dir() -> Path:
    return Path(__file__).parent / "scenarios"


def locate(path) -> Path:
    """The given path if it exists, else the bundled scenario of the same file name."""
    p = Path(path)
    if p.exists():
        return p
    cand = bundled_dir() / p.name
    if cand.exists():
        return cand
    cand = bundled_dir() / f"{p.name}.cfg"
    if cand.exists():
        return cand
    raise ConfigError(f"no such config file: {path}")
