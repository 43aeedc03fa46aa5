"""Declarative run configuration (TOML) with field-level validation."""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..constitutive import MODES
from ..solver import SolverParams

STUDIES = ("single", "delta-convergence", "force-sweep")
BC_SOURCES = ("oracle", "oracle-edge", "oracle-screw", "oracle-loop", "oracle-superposition", "zero")
DISLOCATION_TYPES = ("edge", "screw", "straight", "loop")
FORMATS = ("csv", "vtk")
METHODS = ("NLPK", "LPK", "EG")


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""


def _err(path, msg):
    return ConfigError(f"{path}: {msg}")


def _vec(value, path, size=3):
    try:
        v = [float(x) for x in value]
    except (TypeError, ValueError):
        raise _err(path, f"expected a list of numbers, got {value!r}") from None
    if not 1 <= len(v) <= size:
        raise _err(path, f"expected up to {size} components, got {len(v)}")
    if not all(math.isfinite(x) for x in v):
        raise _err(path, "components must be finite")
    return tuple(v + [0.0] * (size - len(v)))


def _num(section, key, path, default=None, positive=False, required=False):
    if key not in section:
        if required:
            raise _err(f"{path}.{key}", "is required")
        return default
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise _err(f"{path}.{key}", f"expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise _err(f"{path}.{key}", "must be finite")
    if positive and not value > 0:
        raise _err(f"{path}.{key}", "must be positive")
    return value


def _check_keys(section, allowed, path):
    extra = set(section) - set(allowed)
    if extra:
        raise _err(path, f"unknown keys {sorted(extra)}")


@dataclass(frozen=True)
class GeometryConfig:
    dim: int
    lower: tuple
    lengths: tuple
    nodes: tuple

    @property
    def length(self) -> float:
        return self.lengths[0]


@dataclass(frozen=True)
class MaterialConfig:
    E: float
    nu: float
    rho: float = 8000.0
    mode: str = "plane_strain"


@dataclass(frozen=True)
class DislocationConfig:
    type: str
    burgers: tuple
    core: tuple = (0.0, 0.0, 0.0)
    cut_direction: tuple = (-1.0, 0.0, 0.0)
    normal: tuple = (0.0, 1.0, 0.0)
    line_direction: tuple | None = None
    radius: float | None = None
    sign: int = 1


@dataclass(frozen=True)
class ProbeConfig:
    name: str
    start: tuple
    end: tuple
    points: int | None = None


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    formats: tuple = ("csv",)
    fields: bool = True
    probes: tuple = ()


@dataclass(frozen=True)
class StudyConfig:
    type: str = "single"
    horizons: tuple = ()
    nodes: tuple = ()
    separations: tuple = ()
    methods: tuple = METHODS
    direction: tuple = (1.0, 0.0, 0.0)


@dataclass(frozen=True)
class RunConfig:
    geometry: GeometryConfig
    material: MaterialConfig
    dislocations: tuple
    M: float | None
    delta: float | None
    solver: SolverParams
    warm_start: bool
    bc_source: str
    oracle_tolerance: float
    output: OutputConfig
    study: StudyConfig
    name: str = "run"

    @property
    def spacing(self) -> float:
        return self.geometry.lengths[0] / self.geometry.nodes[0]

    @property
    def horizon(self) -> float:
        if self.delta is not None:
            return self.delta
        return self.M * self.geometry.lengths[0] / self.geometry.nodes[0]

    @property
    def character_number(self) -> float:
        return self.horizon * self.geometry.nodes[0] / self.geometry.lengths[0]

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def with_nodes(self, n: int) -> "RunConfig":
        g = self.geometry
        return self.replace(geometry=dataclasses.replace(g, nodes=(int(n),) * g.dim))

    def with_horizon(self, delta: float) -> "RunConfig":
        return self.replace(delta=float(delta), M=None)

    def resolved(self) -> dict:
        """Plain-data view with derived horizon, used for hashing and reports."""
        d = dataclasses.asdict(self)
        d["horizon"] = self.horizon
        d["character_number"] = self.character_number
        d["output"].pop("directory")
        return d

    def hash(self) -> str:
        text = json.dumps(self.resolved(), sort_keys=True, default=repr)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _geometry(sec) -> GeometryConfig:
    path = "geometry"
    _check_keys(sec, ("dim", "length", "lengths", "lower", "nodes"), path)
    dim = sec.get("dim", 2)
    if dim not in (2, 3):
        raise _err(f"{path}.dim", f"must be 2 or 3, got {dim!r}")
    if "lengths" in sec:
        lengths = _vec(sec["lengths"], f"{path}.lengths", dim)
    elif "length" in sec:
        lengths = (_num(sec, "length", path, positive=True),) * dim
    else:
        raise _err(f"{path}.length", "is required")
    if min(lengths) <= 0:
        raise _err(f"{path}.lengths", "must be positive")
    nodes = sec.get("nodes")
    if nodes is None:
        raise _err(f"{path}.nodes", "is required")
    nodes = (nodes,) * dim if isinstance(nodes, int) else tuple(nodes)
    if len(nodes) != dim or not all(isinstance(n, int) and n >= 2 for n in nodes):
        raise _err(f"{path}.nodes", f"need {dim} integers >= 2, got {nodes!r}")
    lower = _vec(sec["lower"], f"{path}.lower", dim) if "lower" in sec else tuple(-0.5 * x for x in lengths)
    spacings = [a / n for a, n in zip(lengths, nodes)]
    if not np.allclose(spacings, spacings[0], rtol=1e-10, atol=0):
        raise _err(f"{path}.nodes", f"grid spacing must be equal on all axes, got {spacings}")
    return GeometryConfig(dim, lower[:dim], lengths[:dim], nodes)


def _material(sec) -> MaterialConfig:
    path = "material"
    _check_keys(sec, ("E", "nu", "rho", "mode"), path)
    E = _num(sec, "E", path, required=True, positive=True)
    nu = _num(sec, "nu", path, required=True)
    if not -1.0 < nu < 0.5:
        raise _err(f"{path}.nu", "must lie in (-1, 0.5)")
    rho = _num(sec, "rho", path, default=8000.0, positive=True)
    mode = sec.get("mode", "plane_strain")
    if mode not in MODES:
        raise _err(f"{path}.mode", f"must be one of {MODES}, got {mode!r}")
    return MaterialConfig(E, nu, rho, mode)


def _dislocation(sec, k, geom: GeometryConfig) -> DislocationConfig:
    path = f"dislocations[{k}]"
    _check_keys(sec, ("type", "burgers", "core", "center", "cut_direction", "normal",
                      "line_direction", "radius", "sign"), path)
    kind = sec.get("type")
    if kind not in DISLOCATION_TYPES:
        raise _err(f"{path}.type", f"must be one of {DISLOCATION_TYPES}, got {kind!r}")
    if "burgers" not in sec:
        raise _err(f"{path}.burgers", "is required")
    b = _vec(sec["burgers"], f"{path}.burgers")
    core = _vec(sec.get("center", sec.get("core", (0, 0, 0))), f"{path}.core")
    sign = sec.get("sign", 1)
    if sign not in (1, -1):
        raise _err(f"{path}.sign", "must be +1 or -1")
    lo, hi = np.array(geom.lower), np.array(geom.lower) + np.array(geom.lengths)
    if np.any(np.array(core[:geom.dim]) < lo) or np.any(np.array(core[:geom.dim]) > hi):
        raise _err(f"{path}.core", f"{core} lies outside the box")
    if geom.dim == 2 and core[2] != 0:
        raise _err(f"{path}.core", "z must be 0 in 2D")
    normal_default = (0.0, 0.0, 1.0) if kind == "loop" else (0.0, 1.0, 0.0)
    normal = _vec(sec.get("normal", normal_default), f"{path}.normal")
    if np.linalg.norm(normal) == 0:
        raise _err(f"{path}.normal", "must be nonzero")
    nhat = np.array(normal) / np.linalg.norm(normal)
    bvec = np.array(b)
    if abs(bvec @ nhat) >= 1e-12 * max(np.linalg.norm(bvec), 1e-300):
        raise _err(f"{path}.burgers", "must be tangent to the cut plane (glide dislocation)")
    if kind == "loop":
        if geom.dim != 3:
            raise _err(f"{path}.type", "loops need a 3D geometry")
        radius = _num(sec, "radius", path, required=True, positive=True)
        return DislocationConfig(kind, b, core, normal=normal, radius=radius, sign=sign)
    cut = _vec(sec.get("cut_direction", (-1, 0, 0)), f"{path}.cut_direction")
    chat = np.array(cut) / max(np.linalg.norm(cut), 1e-300)
    if np.linalg.norm(cut) == 0 or abs(chat @ nhat) > 1e-12:
        raise _err(f"{path}.cut_direction", "must be nonzero and orthogonal to the normal")
    line = tuple(np.cross(-chat, nhat))
    if "line_direction" in sec:
        given = np.array(_vec(sec["line_direction"], f"{path}.line_direction"))
        given = given / max(np.linalg.norm(given), 1e-300)
        if not np.allclose(given, line, atol=1e-9):
            raise _err(f"{path}.line_direction", f"must equal (-cut_direction) x normal = {line}")
    if geom.dim == 2 and not np.allclose(line, (0, 0, 1), atol=1e-12) and not np.allclose(line, (0, 0, -1), atol=1e-12):
        raise _err(f"{path}.normal", "2D cuts need in-plane cut direction and normal")
    t = np.array(line)
    bmag = np.linalg.norm(bvec)
    if kind == "edge" and abs(bvec @ t) > 1e-9 * bmag:
        raise _err(f"{path}.burgers", "edge dislocation needs b perpendicular to the line")
    if kind == "screw":
        if geom.dim != 3:
            raise _err(f"{path}.type", "screw dislocations need a 3D geometry")
        if np.linalg.norm(np.cross(bvec, t)) > 1e-9 * bmag:
            raise _err(f"{path}.burgers", "screw dislocation needs b parallel to the line")
    if geom.dim == 2 and abs(b[2]) > 0:
        raise _err(f"{path}.burgers", "out-of-plane Burgers vector in a 2D run")
    return DislocationConfig(kind, b, core, cut, normal, line, None, sign)


def _solver(sec) -> tuple:
    path = "solver"
    names = {f.name for f in dataclasses.fields(SolverParams)}
    _check_keys(sec, names | {"warm_start"}, path)
    kwargs = {}
    for key in names:
        if key in sec:
            kwargs[key] = sec[key]
    try:
        params = SolverParams(**kwargs)
    except (TypeError, ValueError) as exc:
        raise _err(path, str(exc)) from None
    warm = sec.get("warm_start", False)
    if not isinstance(warm, bool):
        raise _err(f"{path}.warm_start", "must be true or false")
    return params, warm


def _output(sec) -> OutputConfig:
    path = "output"
    _check_keys(sec, ("directory", "formats", "fields", "probes"), path)
    formats = sec.get("formats", ["csv"])
    formats = (formats,) if isinstance(formats, str) else tuple(formats)
    if "both" in formats:
        formats = FORMATS
    for f in formats:
        if f not in FORMATS:
            raise _err(f"{path}.formats", f"unknown format {f!r}")
    probes = []
    for k, p in enumerate(sec.get("probes", [])):
        ppath = f"{path}.probes[{k}]"
        _check_keys(p, ("name", "start", "end", "points"), ppath)
        for key in ("start", "end"):
            if key not in p:
                raise _err(f"{ppath}.{key}", "is required")
        points = p.get("points")
        if points is not None and (not isinstance(points, int) or points < 2):
            raise _err(f"{ppath}.points", "must be an integer >= 2")
        probes.append(ProbeConfig(str(p.get("name", f"probe{k}")), _vec(p["start"], f"{ppath}.start"),
                                  _vec(p["end"], f"{ppath}.end"), points))
    return OutputConfig(str(sec.get("directory", "out")), formats, bool(sec.get("fields", True)),
                        tuple(probes))


def _study(sec) -> StudyConfig:
    path = "study"
    _check_keys(sec, ("type", "horizons", "nodes", "separations", "methods", "direction"), path)
    kind = sec.get("type", "single")
    if kind not in STUDIES:
        raise _err(f"{path}.type", f"must be one of {STUDIES}, got {kind!r}")
    horizons = tuple(float(h) for h in sec.get("horizons", ()))
    if any(not h > 0 for h in horizons):
        raise _err(f"{path}.horizons", "must be positive")
    nodes = tuple(sec.get("nodes", ()))
    if any(not isinstance(n, int) or n < 2 for n in nodes):
        raise _err(f"{path}.nodes", "must be integers >= 2")
    seps = tuple(float(s) for s in sec.get("separations", ()))
    if any(s < 0 for s in seps):
        raise _err(f"{path}.separations", "must be non-negative")
    methods = tuple(sec.get("methods", METHODS))
    for m in methods:
        if m not in METHODS:
            raise _err(f"{path}.methods", f"unknown method {m!r}")
    direction = _vec(sec.get("direction", (1, 0, 0)), f"{path}.direction")
    if np.linalg.norm(direction) == 0:
        raise _err(f"{path}.direction", "must be nonzero")
    if kind == "delta-convergence" and not (horizons or nodes):
        raise _err(path, "delta-convergence needs horizons or nodes")
    if kind == "force-sweep" and not seps:
        raise _err(f"{path}.separations", "force-sweep needs separations")
    return StudyConfig(kind, horizons, nodes, seps, methods,
                       tuple(np.array(direction) / np.linalg.norm(direction)))


def config_from_dict(data: dict) -> RunConfig:
    data = copy.deepcopy(data)
    _check_keys(data, ("name", "geometry", "material", "dislocations", "discretization",
                       "boundary", "solver", "output", "study"), "config")
    for key in ("geometry", "material"):
        if key not in data:
            raise _err(key, "section is required")
    geom = _geometry(data["geometry"])
    mat = _material(data["material"])
    if (mat.mode == "3d") != (geom.dim == 3):
        raise _err("material.mode", f"{mat.mode!r} does not match a {geom.dim}D geometry")
    disl = tuple(_dislocation(d, k, geom) for k, d in enumerate(data.get("dislocations", [])))
    disc = data.get("discretization", {})
    _check_keys(disc, ("M", "delta"), "discretization")
    M = _num(disc, "M", "discretization", positive=True)
    delta = _num(disc, "delta", "discretization", positive=True)
    if (M is None) == (delta is None):
        raise _err("discretization", "give exactly one of M or delta")
    dx = geom.lengths[0] / geom.nodes[0]
    h = delta if delta is not None else M * dx
    if not h > dx:
        raise _err("discretization", f"horizon {h:g} must exceed the grid spacing {dx:g}")
    bsec = data.get("boundary", {})
    _check_keys(bsec, ("source", "tolerance"), "boundary")
    source = bsec.get("source", "oracle" if disl else "zero")
    if source not in BC_SOURCES:
        raise _err("boundary.source", f"must be one of {BC_SOURCES}, got {source!r}")
    single = {"oracle-edge": "edge", "oracle-screw": "screw", "oracle-loop": "loop"}
    if source in single and (len(disl) != 1 or disl[0].type != single[source]):
        raise _err("boundary.source", f"{source!r} needs exactly one {single[source]} dislocation")
    tol = _num(bsec, "tolerance", "boundary", default=1e-10, positive=True)
    params, warm = _solver(data.get("solver", {}))
    out = _output(data.get("output", {}))
    study = _study(data.get("study", {}))
    if study.type == "force-sweep" and len(disl) != 2:
        raise _err("study.type", "force-sweep needs exactly two dislocations")
    if warm and source == "zero":
        raise _err("solver.warm_start", "needs an oracle boundary source")
    return RunConfig(geom, mat, disl, M, delta, params, warm, source, tol, out, study,
                     str(data.get("name", "run")))


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(data)
