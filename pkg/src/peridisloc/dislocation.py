"""Volterra cut surfaces and the signed bond crossing codes they induce.

A bond ``X -> X'`` that passes through the cut from its negative side to its
positive side gets code +1, the reverse traversal -1, anything else 0.  The
positive side is the one the effective normal ``sign * normal`` points to, and
the displacement jump across it is ``u+ - u- = b``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_EPS = np.finfo(float).eps


def _unit(v, name="vector"):
    v = np.asarray(v, dtype=float)
    v = np.concatenate([v, np.zeros(3 - v.size)]) if v.size < 3 else v
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError(f"{name} must be nonzero")
    return v / n


def _vec3(v):
    v = np.asarray(v, dtype=float).ravel()
    return np.concatenate([v, np.zeros(3 - v.size)]) if v.size < 3 else v


@dataclass(frozen=True, eq=False)
class HalfPlane:
    """Cut ``{core + s*cut_direction + t*line : s > 0}``; the core line is its edge.

    In 2D this is the half-line ending at the core point.
    """

    core: np.ndarray
    cut_direction: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "core", _vec3(self.core))
        object.__setattr__(self, "cut_direction", _unit(self.cut_direction, "cut_direction"))
        object.__setattr__(self, "normal", _unit(self.normal, "normal"))
        if abs(self.cut_direction @ self.normal) > 1e-12:
            raise ValueError("cut direction must be orthogonal to the normal")

    @property
    def origin(self):
        return self.core

    @property
    def line_direction(self):
        return np.cross(-self.cut_direction, self.normal)

    def contains(self, p, margin):
        return (p - self.core) @ self.cut_direction > margin


@dataclass(frozen=True, eq=False)
class Rectangle:
    """Planar rectangle ``corner + s*line_edge + t*cut_edge``, ``0 < s, t < 1``.

    The edge from ``corner`` along ``line_edge`` is the dislocation line; the
    normal is ``cut_edge x line_edge`` normalized.
    """

    corner: np.ndarray
    line_edge: np.ndarray
    cut_edge: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "corner", _vec3(self.corner))
        object.__setattr__(self, "line_edge", _vec3(self.line_edge))
        object.__setattr__(self, "cut_edge", _vec3(self.cut_edge))
        a, b = self.line_edge, self.cut_edge
        if np.linalg.norm(a) == 0 or np.linalg.norm(b) == 0:
            raise ValueError("rectangle edges must be nonzero")
        if abs(a @ b) > 1e-12 * np.linalg.norm(a) * np.linalg.norm(b):
            raise ValueError("rectangle edges must be orthogonal")

    @property
    def origin(self):
        return self.corner

    @property
    def normal(self):
        return _unit(np.cross(self.cut_edge, self.line_edge))

    @property
    def cut_direction(self):
        return _unit(self.cut_edge)

    @property
    def line_direction(self):
        return _unit(self.line_edge)

    def contains(self, p, margin):
        rel = p - self.corner
        la, lb = np.linalg.norm(self.line_edge), np.linalg.norm(self.cut_edge)
        s = rel @ (self.line_edge / la)
        t = rel @ (self.cut_edge / lb)
        return (s > margin) & (s < la - margin) & (t > margin) & (t < lb - margin)


@dataclass(frozen=True, eq=False)
class Disc:
    center: np.ndarray
    radius: float
    normal: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", _vec3(self.center))
        object.__setattr__(self, "normal", _unit(self.normal, "normal"))
        if not self.radius > 0:
            raise ValueError("disc radius must be positive")

    @property
    def origin(self):
        return self.center

    def contains(self, p, margin):
        rel = p - self.center
        rel = rel - np.outer(rel @ self.normal, self.normal) if rel.ndim == 2 else rel - (rel @ self.normal) * self.normal
        return np.linalg.norm(rel, axis=-1) < self.radius - margin


@dataclass(frozen=True, eq=False)
class DislocationSpec:
    burgers: np.ndarray
    geometry: object
    sign: int = 1

    def __post_init__(self):
        object.__setattr__(self, "burgers", _vec3(self.burgers))
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        b = self.burgers
        if abs(b @ self.geometry.normal) >= 1e-12 * max(np.linalg.norm(b), 1e-300):
            raise ValueError("Burgers vector must be tangent to the cut (glide dislocation)")

    @property
    def normal(self):
        """Effective unit normal pointing to the positive side."""
        return self.sign * self.geometry.normal

    def flipped(self) -> "DislocationSpec":
        return DislocationSpec(self.burgers, self.geometry, -self.sign)

    def with_burgers(self, b) -> "DislocationSpec":
        return DislocationSpec(b, self.geometry, self.sign)


def crossing_codes(X, Xp, disl: DislocationSpec, tol: float = 0.0) -> np.ndarray:
    """Vectorized signed crossing code of segments ``X[k] -> Xp[k]``.

    ``tol`` is the plane-side tolerance; points with signed distance
    ``>= -tol`` count as positive side.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Xp = np.atleast_2d(np.asarray(Xp, dtype=float))
    if X.shape[1] < 3:
        X = np.pad(X, ((0, 0), (0, 3 - X.shape[1])))
    if Xp.shape[1] < 3:
        Xp = np.pad(Xp, ((0, 0), (0, 3 - Xp.shape[1])))
    n = disl.normal
    o = disl.geometry.origin
    s0 = (X - o) @ n
    s1 = (Xp - o) @ n
    side0 = np.where(s0 >= -tol, 1, -1)
    side1 = np.where(s1 >= -tol, 1, -1)
    code = ((side1 - side0) // 2).astype(np.int8)
    hit = np.flatnonzero(code)
    if hit.size:
        t = s0[hit] / (s0[hit] - s1[hit])
        seg = Xp[hit] - X[hit]
        p = X[hit] + t[:, None] * seg
        margin = _EPS * (np.linalg.norm(p - o, axis=1) + np.linalg.norm(seg, axis=1))
        inside = disl.geometry.contains(p, margin)
        code[hit[~inside]] = 0
    return code


def crossing_code(X, Xp, disl: DislocationSpec, tol: float = 0.0) -> int:
    X, Xp = _vec3(X), _vec3(Xp)
    if np.array_equal(X, Xp):
        raise ValueError("degenerate segment: X == X'")
    return int(crossing_codes(X[None], Xp[None], disl, tol)[0])


def bond_correction(X, Xp, dislocations, tol: float = 0.0) -> np.ndarray:
    """Sum of Burgers vectors weighted by the signed crossing codes."""
    X, Xp = _vec3(X), _vec3(Xp)
    if np.array_equal(X, Xp):
        raise ValueError("degenerate segment: X == X'")
    out = np.zeros(3)
    for d in dislocations:
        out += d.burgers * crossing_code(X, Xp, d, tol)
    return out


def crossing_table(neighbors, dislocations) -> np.ndarray:
    """Codes for every (dislocation, node, active forward bond) of a neighbor list.

    Returned as int8 of shape ``(n_dislocations, n_nodes, n_active)``.
    """
    nodes = neighbors.nodes
    active = neighbors.active()
    table = np.zeros((len(dislocations), nodes.size, active.size), dtype=np.int8)
    tol = 1e-9 * nodes.spacing
    X = nodes.positions
    for a, disl in enumerate(dislocations):
        dist = (X - disl.geometry.origin) @ disl.normal
        for col, k in enumerate(active):
            reach = neighbors.length[k] + tol
            cand = np.flatnonzero(np.abs(dist) <= reach)
            cand = cand[neighbors._valid(neighbors.offsets[k])[cand]]
            if cand.size == 0:
                continue
            codes = crossing_codes(X[cand], X[cand] + neighbors.xi[k], disl, tol)
            table[a, cand, col] = codes
    return table
