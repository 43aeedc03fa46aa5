"""Uniform node discretization, fictitious boundary layer and neighbor stencils.

Every body in this package lives on a uniform cell-centred grid, so the
neighborhood of a node is the same set of integer offsets everywhere.  The
neighbor list is therefore stored as a stencil (offset, bond vector, partial
volume, influence weight) plus the extended grid shape; per-node lists are
materialized on demand.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

INTERIOR = "interior"
FICTITIOUS = "fictitious"


@dataclass(frozen=True)
class BoxSpec:
    """Axis-aligned physical box discretized by ``nodes`` cells per axis."""

    lower: tuple
    lengths: tuple
    nodes: tuple
    dim: int = 2

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        for name in ("lower", "lengths", "nodes"):
            value = getattr(self, name)
            if len(value) != self.dim:
                raise ValueError(f"{name} needs {self.dim} entries, got {len(value)}")
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "lengths", tuple(float(v) for v in self.lengths))
        object.__setattr__(self, "nodes", tuple(int(v) for v in self.nodes))
        if min(self.lengths) <= 0:
            raise ValueError("edge lengths must be positive")
        if min(self.nodes) < 2:
            raise ValueError("need at least 2 nodes per edge")
        spacings = [length / n for length, n in zip(self.lengths, self.nodes)]
        if not np.allclose(spacings, spacings[0], rtol=1e-10, atol=0.0):
            raise ValueError(f"grid spacing differs across axes: {spacings}")

    @classmethod
    def centered(cls, length: float, nodes: int, dim: int = 2) -> "BoxSpec":
        """Cube/square of edge ``length`` centred at the origin."""
        return cls((-0.5 * length,) * dim, (length,) * dim, (nodes,) * dim, dim)

    @property
    def spacing(self) -> float:
        return self.lengths[0] / self.nodes[0]

    @property
    def upper(self) -> tuple:
        return tuple(lo + length for lo, length in zip(self.lower, self.lengths))

    def contains(self, point) -> bool:
        p = np.asarray(point, dtype=float)[: self.dim]
        return bool(np.all(p >= self.lower) and np.all(p <= self.upper))


@dataclass(frozen=True, eq=False)
class NodeSet:
    """Interior plus fictitious nodes on the extended grid.

    Positions are always stored with three components (z = 0 in 2D).  Node
    ``k`` sits at extended grid index ``np.unravel_index(k, grid_shape)``; the
    first ``layers`` indices on each side of a physical axis are fictitious.
    """

    box: BoxSpec
    positions: np.ndarray
    volume: np.ndarray
    interior: np.ndarray
    grid_shape: tuple
    layers: int

    @property
    def dim(self) -> int:
        return self.box.dim

    @property
    def spacing(self) -> float:
        return self.box.spacing

    @property
    def size(self) -> int:
        return self.positions.shape[0]

    @property
    def roles(self) -> np.ndarray:
        return np.where(self.interior, INTERIOR, FICTITIOUS)

    @property
    def interior_index(self) -> np.ndarray:
        return np.flatnonzero(self.interior)

    @property
    def fictitious_index(self) -> np.ndarray:
        return np.flatnonzero(~self.interior)

    def grid_index(self, node):
        return np.unravel_index(node, self.grid_shape)

    def nearest(self, points) -> np.ndarray:
        """Index of the grid node nearest to each point (clipped to the grid)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        idx = []
        for axis in range(3):
            if axis < self.dim:
                origin = self.box.lower[axis] - (self.layers - 0.5) * self.spacing
                i = np.rint((pts[:, axis] - origin) / self.spacing).astype(np.int64)
                idx.append(np.clip(i, 0, self.grid_shape[axis] - 1))
            else:
                idx.append(np.zeros(len(pts), dtype=np.int64))
        return np.ravel_multi_index(tuple(idx), self.grid_shape)


def influence_function(r, horizon):
    """Degree-7 polynomial influence weight, zero beyond the horizon."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    s = np.asarray(r, dtype=float) / horizon
    w = 1.0 - 35.0 * s**4 + 84.0 * s**5 - 70.0 * s**6 + 20.0 * s**7
    w = np.where(s <= 1.0, w, 0.0)
    return float(w) if np.ndim(w) == 0 else w


def partial_volume(r, horizon, spacing, dim):
    """Linear partial-volume ramp between ``horizon -/+ spacing/2``."""
    frac = np.clip((horizon + 0.5 * spacing - np.asarray(r, dtype=float)) / spacing, 0.0, 1.0)
    v = frac * spacing**dim
    return float(v) if np.ndim(v) == 0 else v


def build_grid(box: BoxSpec, horizon: float) -> NodeSet:
    dx = box.spacing
    if not horizon > dx:
        raise ValueError(f"horizon {horizon:g} must exceed grid spacing {dx:g}")
    layers = int(math.ceil(horizon / dx - 1e-9))
    counts = [n + 2 * layers for n in box.nodes] + [1] * (3 - box.dim)
    axes = []
    for axis in range(3):
        if axis < box.dim:
            i = np.arange(counts[axis]) - layers
            axes.append(box.lower[axis] + (i + 0.5) * dx)
        else:
            axes.append(np.zeros(1))
    mesh = np.meshgrid(*axes, indexing="ij")
    positions = np.stack([m.ravel() for m in mesh], axis=1)

    inside = np.ones(tuple(counts), dtype=bool)
    for axis in range(box.dim):
        i = np.arange(counts[axis])
        ok = (i >= layers) & (i < layers + box.nodes[axis])
        shape = [1, 1, 1]
        shape[axis] = -1
        inside &= ok.reshape(shape)
    n = positions.shape[0]
    return NodeSet(
        box=box,
        positions=positions,
        volume=np.full(n, dx**box.dim),
        interior=inside.ravel(),
        grid_shape=tuple(counts),
        layers=layers,
    )


@dataclass(frozen=True, eq=False)
class NeighborList:
    """Stencil neighbor table shared by every node of a uniform grid.

    ``offsets`` are integer grid offsets of all stored bonds (both directions);
    ``forward`` marks the half of them used for pairwise loops.  Bonds whose
    far end falls outside the extended grid do not exist for that node.
    """

    nodes: NodeSet
    horizon: float
    offsets: np.ndarray
    xi: np.ndarray
    length: np.ndarray
    volume: np.ndarray
    weight: np.ndarray
    forward: np.ndarray
    weighted_volume: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def cutoff(self) -> float:
        return self.horizon + 0.5 * self.nodes.spacing

    @property
    def reach(self) -> int:
        return int(np.abs(self.offsets).max())

    def _valid(self, offset) -> np.ndarray:
        """Mask of nodes whose neighbor at ``offset`` exists."""
        shape = self.nodes.grid_shape
        ok = np.ones(shape, dtype=bool)
        for axis, d in enumerate(offset):
            if d == 0:
                continue
            i = np.arange(shape[axis]) + d
            keep = (i >= 0) & (i < shape[axis])
            s = [1, 1, 1]
            s[axis] = -1
            ok &= keep.reshape(s)
        return ok.ravel()

    def flat_offset(self, offset) -> int:
        n0, n1, n2 = self.nodes.grid_shape
        return int((offset[0] * n1 + offset[1]) * n2 + offset[2])

    def neighbors(self, node: int):
        """(neighbor index, bond vector, effective volume, weight) of one node."""
        idx = np.asarray(self.nodes.grid_index(node))
        far = idx[None, :] + self.offsets
        ok = np.all((far >= 0) & (far < np.asarray(self.nodes.grid_shape)), axis=1)
        j = np.ravel_multi_index(tuple(far[ok].T), self.nodes.grid_shape)
        return j, self.xi[ok], self.volume[ok], self.weight[ok]

    def pairs(self, forward_only: bool = False):
        """All (i, j, stencil index) triples; meant for small grids and checks."""
        out_i, out_j, out_k = [], [], []
        for k, off in enumerate(self.offsets):
            if forward_only and not self.forward[k]:
                continue
            i = np.flatnonzero(self._valid(off))
            out_i.append(i)
            out_j.append(i + self.flat_offset(off))
            out_k.append(np.full(i.size, k))
        return np.concatenate(out_i), np.concatenate(out_j), np.concatenate(out_k)

    def bond_counts(self) -> np.ndarray:
        counts = np.zeros(self.nodes.size, dtype=np.int64)
        for off in self.offsets:
            counts += self._valid(off)
        return counts

    def active(self):
        """Forward stencil entries with nonzero weight, as used by the kernels."""
        if "active" not in self._cache:
            keep = self.forward & (self.weight * self.volume > 0)
            self._cache["active"] = np.flatnonzero(keep)
        return self._cache["active"]


def _is_forward(offset) -> bool:
    for d in offset:
        if d != 0:
            return d > 0
    return False


def build_neighbors(nodes: NodeSet, horizon: float, influence=influence_function) -> NeighborList:
    dx = nodes.spacing
    if not horizon > dx:
        raise ValueError(f"horizon {horizon:g} must exceed grid spacing {dx:g}")
    cutoff = horizon + 0.5 * dx
    reach = int(math.floor(cutoff / dx + 1e-9))
    rng = np.arange(-reach, reach + 1)
    zero = np.zeros(1, dtype=np.int64)
    grids = np.meshgrid(rng, rng, rng if nodes.dim == 3 else zero, indexing="ij")
    offsets = np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)
    xi = offsets * dx
    length = np.linalg.norm(xi, axis=1)
    keep = (length > 0) & (length <= cutoff * (1 + 1e-12))
    offsets, xi, length = offsets[keep], xi[keep], length[keep]
    volume = partial_volume(length, horizon, dx, nodes.dim)
    keep = volume > 0
    offsets, xi, length, volume = offsets[keep], xi[keep], length[keep], volume[keep]
    weight = np.asarray(influence(length, horizon), dtype=float)
    forward = np.array([_is_forward(o) for o in offsets])

    nl = NeighborList(
        nodes=nodes,
        horizon=float(horizon),
        offsets=offsets,
        xi=xi,
        length=length,
        volume=volume,
        weight=weight,
        forward=forward,
        weighted_volume=np.zeros(nodes.size),
    )
    m = nl.weighted_volume
    for k, off in enumerate(offsets):
        m += nl._valid(off) * (weight[k] * length[k] ** 2 * volume[k])
    return nl
