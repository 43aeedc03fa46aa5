"""Run orchestration: build a case from a config, relax it, measure and write."""
from __future__ import annotations

import dataclasses
import logging
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from ..constitutive import MaterialModel, PeridynamicBody
from ..dislocation import Disc, DislocationSpec, HalfPlane, Rectangle
from ..domain import BoxSpec, build_grid, build_neighbors
from ..oracle import ZeroField, driving_force_eg, oracle_for, pk_force, relative_l2_diff, voigt
from ..solver import relax
from .config import ConfigError, RunConfig
from .output import (FieldOutput, ensure_writable, sample_line, write_fields, write_json,
                     write_table)

log = logging.getLogger(__name__)


@dataclass
class Case:
    config: RunConfig
    nodes: object
    neighbors: object
    material: MaterialModel
    dislocations: list
    body: PeridynamicBody
    oracle: object
    sign_flips: list = field(default_factory=list)


@dataclass
class RunResult:
    case: Case
    state: object
    fields: object
    report: dict


def make_material(cfg: RunConfig) -> MaterialModel:
    m = cfg.material
    return MaterialModel(m.E, m.nu, m.rho, m.mode)


def make_dislocation(dc, nodes) -> DislocationSpec:
    """Cut geometry for one configured dislocation.

    Straight 3D cuts are rectangles reaching past the fictitious layer so the
    dislocation line and the cut extend through the whole grid.
    """
    core = np.array(dc.core)
    if dc.type == "loop":
        geom = Disc(core, dc.radius, dc.normal)
    elif nodes.dim == 2:
        geom = HalfPlane(core, dc.cut_direction, dc.normal)
    else:
        lo = np.array(nodes.box.lower) - (nodes.layers + 1) * nodes.spacing
        hi = np.array(nodes.box.upper) + (nodes.layers + 1) * nodes.spacing
        ext = 2.0 * np.linalg.norm(hi - lo)
        t = np.array(dc.line_direction, dtype=float)
        t /= np.linalg.norm(t)
        d = np.array(dc.cut_direction, dtype=float)
        d /= np.linalg.norm(d)
        geom = Rectangle(core - ext * t, 2 * ext * t, ext * d)
    return DislocationSpec(dc.burgers, geom, dc.sign)


def _probe_point(disl: DislocationSpec, spacing):
    g = disl.geometry
    if isinstance(g, Disc):
        return g.center
    if isinstance(g, HalfPlane):
        return g.core + 10.0 * spacing * g.cut_direction
    mid = g.corner + 0.5 * g.line_edge
    return mid + 10.0 * spacing * g.cut_direction


def verify_sign(disl: DislocationSpec, material, spacing, plane_tol):
    """Check the oracle jump against the simulator's positive side; flip if reversed.

    Returns ``(dislocation, flipped)``.
    """
    b = disl.burgers
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return disl, False
    field_ = oracle_for([disl], material, plane_tol=plane_tol)
    p = _probe_point(disl, spacing)
    eps = 0.25 * spacing
    n = disl.normal
    jump = field_.displacement(np.array([p + eps * n, p - eps * n]))
    jump = jump[0] - jump[1]
    if np.linalg.norm(jump - b) < 0.1 * bnorm:
        return disl, False
    if np.linalg.norm(jump + b) < 0.1 * bnorm:
        return disl.flipped(), True
    raise RuntimeError(f"oracle jump {jump} matches neither +b nor -b = {b}")


def _box(cfg: RunConfig) -> BoxSpec:
    g = cfg.geometry
    return BoxSpec(g.lower, g.lengths, g.nodes, g.dim)


def build_case(cfg: RunConfig) -> Case:
    nodes = build_grid(_box(cfg), cfg.horizon)
    neighbors = build_neighbors(nodes, cfg.horizon)
    material = make_material(cfg)
    tol = 1e-9 * nodes.spacing
    dislocations, flips = [], []
    for k, dc in enumerate(cfg.dislocations):
        d = make_dislocation(dc, nodes)
        if cfg.bc_source != "zero":
            d, flipped = verify_sign(d, material, nodes.spacing, tol)
            if flipped:
                log.warning("dislocation %d: sign flag flipped to match the oracle jump", k)
                flips.append(k)
        dislocations.append(d)
    body = PeridynamicBody(nodes, neighbors, material, dislocations)
    if cfg.bc_source == "zero":
        oracle = ZeroField()
    else:
        oracle = oracle_for(dislocations, material, tol=cfg.oracle_tolerance, plane_tol=tol)
    return Case(cfg, nodes, neighbors, material, dislocations, body, oracle, flips)


# ---------------------------------------------------------------------------
# measurements
# ---------------------------------------------------------------------------

def _axis_of(v):
    v = np.asarray(v, dtype=float)
    a = int(np.argmax(np.abs(v)))
    if not np.isclose(abs(v[a]), np.linalg.norm(v), rtol=1e-12, atol=0):
        return None
    return a


def jump_profile(nodes, u, disl: DislocationSpec) -> dict | None:
    """Displacement jump across the cut along a grid line through its origin.

    On each side the two nearest node layers are extrapolated linearly to the
    plane.  ``s`` is the coordinate along the cut direction measured from the
    core (positive inside the cut) for straight cuts and from the centre
    along the first in-plane grid axis for discs.  The line is taken through
    the box mid-plane (straight 3D cuts) or the disc centre.  Returns None
    when the cut plane is not aligned with the grid.
    """
    g = disl.geometry
    n = disl.normal
    an = _axis_of(n)
    if an is None:
        return None
    if isinstance(g, Disc):
        ad = next(k for k in range(nodes.dim) if k != an)
        d = np.eye(3)[ad]
        origin = g.center
    else:
        d = g.cut_direction
        ad = _axis_of(d)
        origin = g.origin
    if ad is None or ad == an:
        return None
    other = 3 - an - ad
    dx, lay = nodes.spacing, nodes.layers

    def coords(axis):
        if axis >= nodes.dim:
            return np.zeros(1)
        return nodes.box.lower[axis] + (np.arange(nodes.grid_shape[axis]) - lay + 0.5) * dx

    if isinstance(g, Disc) or other >= nodes.dim:
        target = origin[other]
    else:
        target = 0.5 * (nodes.box.lower[other] + nodes.box.upper[other])
    k_other = int(np.argmin(np.abs(coords(other) - target)))
    U = np.moveaxis(np.asarray(u).reshape(tuple(nodes.grid_shape) + (3,)), (an, ad, other), (0, 1, 2))
    U = U[:, :, k_other]
    h = (coords(an) - origin[an]) * np.sign(n[an])
    tol = 1e-9 * dx
    pos = np.flatnonzero(h >= -tol)
    neg = np.flatnonzero(h < -tol)
    if pos.size < 2 or neg.size < 2:
        return None
    p1, p2 = pos[np.argsort(h[pos])[:2]]
    m1, m2 = neg[np.argsort(-h[neg])[:2]]

    def extrapolate(i1, i2):
        return (h[i2] * U[i1] - h[i1] * U[i2]) / (h[i2] - h[i1])

    cols = np.arange(lay, lay + nodes.box.nodes[ad])
    jumps = (extrapolate(p1, p2) - extrapolate(m1, m2))[cols]
    s = (coords(ad)[cols] - origin[ad]) * np.sign(d[ad])
    where = np.zeros((cols.size, 3))
    where[:, an] = origin[an]
    where[:, ad] = coords(ad)[cols]
    where[:, other] = coords(other)[k_other]
    b = disl.burgers
    bn = np.linalg.norm(b)
    along = jumps @ b / bn**2 if bn > 0 else np.zeros(cols.size)
    return {"s": s, "jump": jumps, "jump_over_b": along, "position": where}


def interpolate_grid(nodes, values, points):
    """Multilinear interpolation of node values on the extended grid."""
    dx = nodes.spacing
    axes = []
    for a in range(nodes.dim):
        start = nodes.box.lower[a] - (nodes.layers - 0.5) * dx
        axes.append(start + dx * np.arange(nodes.grid_shape[a]))
    vals = np.asarray(values).reshape(tuple(nodes.grid_shape[:nodes.dim]) + (-1,))
    interp = RegularGridInterpolator(axes, vals, method="linear", bounds_error=True)
    pts = np.atleast_2d(points)[:, :nodes.dim]
    return interp(pts)


def safe_oracle(oracle, points):
    """Oracle displacement and stress, NaN where the field is singular."""
    points = np.atleast_2d(points)
    try:
        return oracle.displacement(points), oracle.stress(points)
    except ValueError:
        u = np.full((len(points), 3), np.nan)
        s = np.full((len(points), 3, 3), np.nan)
        for i, p in enumerate(points):
            try:
                u[i] = oracle.displacement(p[None])[0]
                s[i] = oracle.stress(p[None])[0]
            except ValueError:
                pass
        return u, s


# ---------------------------------------------------------------------------
# single run
# ---------------------------------------------------------------------------

def relax_case(case: Case, log_stream=None):
    cfg = case.config
    nodes = case.nodes
    if isinstance(case.oracle, ZeroField):
        bc = np.zeros((nodes.fictitious_index.size, 3))
        u0 = None
    else:
        fict = nodes.fictitious_index
        if cfg.warm_start:
            u0 = case.oracle.displacement(nodes.positions)
            bc = u0[fict]
        else:
            bc = case.oracle.displacement(nodes.positions[fict])
            u0 = None
    return relax(case.body, cfg.solver, bc=bc, u0=u0, log=log_stream)


def run(cfg: RunConfig, out_dir=None, log_stream=None, write: bool = True,
        formats=None) -> RunResult:
    """Build, relax and measure one configuration; optionally write outputs.

    The report holds D_u (when an oracle is configured), the jump profile of
    each cut, residuals, iteration count, total energy and wall time.
    """
    t0 = time.perf_counter()
    out = Path(out_dir or cfg.output.directory)
    if write:
        ensure_writable(out)
    case = build_case(cfg)
    nodes = case.nodes
    state = relax_case(case, log_stream)
    fs = case.body.evaluate(state.u, energy=True, stress=True)
    I = nodes.interior
    V = nodes.volume
    report = {
        "name": cfg.name,
        "config_hash": cfg.hash(),
        "config": cfg.resolved(),
        "nodes_total": nodes.size,
        "nodes_interior": int(I.sum()),
        "spacing": nodes.spacing,
        "horizon": cfg.horizon,
        "character_number": cfg.character_number,
        "iterations": state.iteration,
        "residual_initial": state.residual0,
        "residual_final": state.residual,
        "converged": state.converged,
        "total_energy": float(np.sum(fs.energy[I] * V[I])),
        "bc_source": cfg.bc_source,
        "oracle_tolerance": cfg.oracle_tolerance,
        "sign_flips": case.sign_flips,
    }
    if not isinstance(case.oracle, ZeroField):
        u_ref = case.oracle.displacement(nodes.positions[I])
        ref_norm = float(np.sum(u_ref**2))
        report["D_u"] = relative_l2_diff(state.u[I], u_ref, V[I]) if ref_norm > 0 else None
    else:
        report["D_u"] = None
    report["jump_profiles"] = [jump_profile(nodes, state.u, d) for d in case.dislocations]
    fields = FieldOutput(np.flatnonzero(I), nodes.positions[I], state.u[I], fs.stress[I], fs.theta[I])
    report["max_abs_stress"] = float(np.max(np.abs(fs.stress[I]))) if I.any() else 0.0
    if write:
        formats = formats or cfg.output.formats
        if cfg.output.fields:
            report["files"] = [str(p) for p in write_fields(fields, out, formats)]
        for probe in cfg.output.probes:
            write_probe(case, fields, probe, out)
    report["wall_time"] = time.perf_counter() - t0
    if write:
        write_json(report, out / "report.json")
    return RunResult(case, state, fields, report)


def probe_rows(case: Case, fields: FieldOutput, start, end, points=None):
    idx, s = sample_line(fields.positions, start, end, points, case.nodes.spacing)
    sub = fields.subset(idx)
    u_ref, s_ref = safe_oracle(case.oracle, sub.positions)
    s_ref = voigt(s_ref)
    rows = []
    names = ("sxx", "syy", "szz", "sxy", "sxz", "syz")
    for k in range(len(sub)):
        row = {"id": int(sub.ids[k]), "s": float(s[k])}
        row.update(zip(("x", "y", "z"), map(float, sub.positions[k])))
        row.update(zip(("ux", "uy", "uz"), map(float, sub.displacement[k])))
        row.update(zip(names, map(float, sub.stress[k])))
        row["theta"] = float(sub.theta[k])
        row.update(zip(("ux_ref", "uy_ref", "uz_ref"), map(float, u_ref[k])))
        row.update(zip([n + "_ref" for n in names], map(float, s_ref[k])))
        rows.append(row)
    return rows


PROBE_COLUMNS = ["id", "s", "x", "y", "z", "ux", "uy", "uz", "sxx", "syy", "szz", "sxy", "sxz",
                 "syz", "theta", "ux_ref", "uy_ref", "uz_ref", "sxx_ref", "syy_ref", "szz_ref",
                 "sxy_ref", "sxz_ref", "syz_ref"]


def write_probe(case, fields, probe, out_dir):
    rows = probe_rows(case, fields, probe.start, probe.end, probe.points)
    return write_table(rows, Path(out_dir) / f"probe_{probe.name}.csv", PROBE_COLUMNS)


# ---------------------------------------------------------------------------
# studies
# ---------------------------------------------------------------------------

STUDY_DELTA_COLUMNS = ["delta", "M", "N", "D_u", "iterations", "converged", "wall_time"]


def delta_convergence_study(cfg: RunConfig, horizons=None, nodes=None, out_dir=None,
                            write: bool = True) -> list:
    """D_u for a series of horizons, sorted by horizon.

    With fixed ``M`` each horizon maps to ``N = M L / delta`` (must be an
    integer); with a fixed horizon in the base config the node counts vary.
    Non-monotone D_u (not decreasing as delta shrinks) raises a warning.
    """
    horizons = list(horizons if horizons is not None else cfg.study.horizons)
    node_list = list(nodes if nodes is not None else cfg.study.nodes)
    L = cfg.geometry.lengths[0]
    cases = []
    for n in node_list:
        cases.append(cfg.with_nodes(n))
    for h in horizons:
        if cfg.M is not None:
            n_real = cfg.M * L / h
            n = int(round(n_real))
            if abs(n - n_real) > 1e-6 * n_real:
                raise ConfigError(f"study.horizons: M*L/delta = {n_real:g} is not an integer node count")
            cases.append(cfg.with_nodes(n))
        else:
            cases.append(cfg.with_horizon(h))
    if not cases:
        raise ConfigError("study: no horizons given")
    out = Path(out_dir or cfg.output.directory)
    if write:
        ensure_writable(out)
    cases.sort(key=lambda c: c.horizon)
    rows = []
    try:
        for c in cases:
            sub = out / f"N{c.geometry.nodes[0]}_delta{c.horizon:.6g}"
            res = run(c, sub, write=write)
            rows.append({"delta": c.horizon, "M": c.character_number, "N": c.geometry.nodes[0],
                         "D_u": res.report["D_u"], "iterations": res.report["iterations"],
                         "converged": res.report["converged"], "wall_time": res.report["wall_time"]})
    finally:
        if write and rows:
            write_table(rows, out / "delta_convergence.csv", STUDY_DELTA_COLUMNS)
    du = [r["D_u"] for r in rows]
    if len(du) > 1 and any(b < a for a, b in zip(du, du[1:])):
        warnings.warn("D_u is not monotone non-increasing as the horizon decreases", RuntimeWarning)
    return rows


STUDY_FORCE_COLUMNS = ["separation", "NLPK", "LPK", "EG", "energy"]


def force_sweep_study(cfg: RunConfig, separations=None, methods=None, out_dir=None,
                      write: bool = True) -> list:
    """Glide force on the second dislocation versus its offset from the first.

    NLPK: virial stress of the first dislocation alone, interpolated at the
    second core.  LPK: analytic stress there.  EG: central differences of the
    total interior energy of the two-dislocation runs (needs equally spaced
    separations).  All values are the component along ``study.direction``.
    """
    seps = np.array(separations if separations is not None else cfg.study.separations, dtype=float)
    methods = tuple(methods or cfg.study.methods)
    if len(cfg.dislocations) != 2:
        raise ConfigError("force-sweep needs exactly two dislocations")
    dx = cfg.spacing
    if np.any((seps > 0) & (seps < dx * (1 - 1e-9))) or np.any(seps < 0):
        raise ConfigError(f"study.separations: nonzero separations must be at least one grid spacing ({dx:g})")
    direction = np.array(cfg.study.direction, dtype=float)
    first, second = cfg.dislocations
    base = np.array(first.core)
    out = Path(out_dir or cfg.output.directory)
    if write:
        ensure_writable(out)
    rows = [{"separation": float(s)} for s in seps]
    points = base[None] + seps[:, None] * direction[None]
    single = cfg.replace(dislocations=(first,))
    xi_dir = np.array(second.line_direction, dtype=float)
    b2 = np.array(second.burgers)
    if "NLPK" in methods:
        res = run(single, out / "single", write=write)
        st = res.case.body.evaluate(res.state.u, stress=True).stress
        sig = interpolate_grid(res.case.nodes, st, points)
        sig = np.array([[[s[0], s[3], s[4]], [s[3], s[1], s[5]], [s[4], s[5], s[2]]] for s in sig])
        f = pk_force(sig, b2, xi_dir) @ direction
        for r, v in zip(rows, f):
            r["NLPK"] = float(v)
    if "LPK" in methods:
        material = make_material(cfg)
        tol = 1e-9 * dx
        lone = make_dislocation(first, build_grid(_box(cfg), cfg.horizon))
        _, sig = safe_oracle(oracle_for([lone], material, plane_tol=tol), points)
        f = pk_force(sig, b2, xi_dir) @ direction
        for r, v in zip(rows, f):
            r["LPK"] = float(v)
    if "EG" in methods:
        energies = []
        for k, s in enumerate(seps):
            moved = dataclasses.replace(second, core=tuple(points[k]))
            c = cfg.replace(dislocations=(first, moved))
            res = run(c, out / f"pair_{k:03d}", write=write)
            energies.append(res.report["total_energy"])
            rows[k]["energy"] = res.report["total_energy"]
        line = 1.0 if cfg.geometry.dim == 2 else _line_length(cfg, xi_dir)
        pos, force = driving_force_eg(list(zip(seps, energies)), line_length=line)
        lookup = dict(zip(np.round(pos / dx, 6), force))
        for r in rows:
            key = round(r["separation"] / dx, 6)
            r["EG"] = float(lookup[key]) if key in lookup else float("nan")
    for r in rows:
        for m in STUDY_FORCE_COLUMNS[1:]:
            r.setdefault(m, float("nan"))
    if write:
        write_table(rows, out / "force_sweep.csv", STUDY_FORCE_COLUMNS)
    return rows


def _line_length(cfg, t):
    """Length of a straight line through the box (interior) along ``t``."""
    a = int(np.argmax(np.abs(t)))
    return cfg.geometry.lengths[a]
