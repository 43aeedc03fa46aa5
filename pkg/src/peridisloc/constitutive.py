"""Linear peridynamic solid with embedded Volterra discontinuities.

Bonds that cross a cut have the Burgers jump subtracted from their deformed
vector before any state is formed; everything downstream (extension,
dilatation, deviatoric extension, force and energy) sees only the corrected
bond.  The per-node functions here are straightforward NumPy and serve as the
reference route; :class:`PeridynamicBody` evaluates whole fields through the
numba kernels.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .dislocation import bond_correction, crossing_table

MODES = ("3d", "plane_stress", "plane_strain")


class CollapsedBondError(FloatingPointError):
    """A deformed bond has zero length."""


@dataclass(frozen=True)
class MaterialModel:
    E: float
    nu: float
    rho: float = 8000.0
    mode: str = "plane_strain"
    body_force: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.E > 0:
            raise ValueError("Young's modulus must be positive")
        if not -1.0 < self.nu < 0.5:
            raise ValueError("Poisson ratio must lie in (-1, 0.5)")
        if not self.rho > 0:
            raise ValueError("density must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        g = tuple(float(v) for v in self.body_force) + (0.0,) * (3 - len(self.body_force))
        object.__setattr__(self, "body_force", g)

    @property
    def dim(self) -> int:
        return 3 if self.mode == "3d" else 2

    @property
    def mu(self) -> float:
        return self.E / (2.0 * (1.0 + self.nu))

    @property
    def bulk(self) -> float:
        return self.E / (3.0 * (1.0 - 2.0 * self.nu))

    @property
    def lame(self) -> float:
        return self.E * self.nu / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu))

    @property
    def kprime(self) -> float:
        k, mu, nu = self.bulk, self.mu, self.nu
        if self.mode == "3d":
            return k
        if self.mode == "plane_stress":
            return k + mu / 9.0 * (nu + 1.0) ** 2 / (2.0 * nu - 1.0) ** 2
        return k + mu / 9.0

    @property
    def dilatation_factor(self) -> float:
        """Prefactor ``c`` in ``theta = (c/m) (w x) . e``."""
        if self.mode == "3d":
            return 3.0
        if self.mode == "plane_stress":
            return 2.0 * (2.0 * self.nu - 1.0) / (self.nu - 1.0)
        return 2.0

    def alpha(self, m):
        """Deviatoric coefficient for weighted volume ``m`` (0 where m == 0)."""
        m = np.asarray(m, dtype=float)
        scale = 15.0 if self.mode == "3d" else 8.0
        out = np.divide(scale * self.mu, m, out=np.zeros_like(m), where=m > 0)
        return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# per-node reference operations
# ---------------------------------------------------------------------------

def embedded_deformed_bond(xi, u_x, u_xp, correction):
    return np.asarray(xi) + np.asarray(u_xp) - np.asarray(u_x) - np.asarray(correction)


def embedded_extension(Y, xi):
    y = np.linalg.norm(Y, axis=-1)
    if np.any(y == 0.0):
        raise CollapsedBondError("deformed bond collapsed to zero length")
    return y - np.linalg.norm(xi, axis=-1)


def dilatation(extensions, weight, length, volume, m, material: MaterialModel):
    if not m > 0:
        raise ValueError("node has zero weighted volume")
    return material.dilatation_factor / m * np.sum(weight * length * extensions * volume)


def deviatoric_extension(extensions, theta, length):
    return extensions - theta * length / 3.0


def scalar_force_state(theta, ed, weight, length, volume, m, material: MaterialModel):
    """Scalar force state on every bond of one node."""
    c = material.dilatation_factor
    alpha = material.alpha(m)
    coupling = np.sum(weight * ed * length * volume)
    if material.mode == "3d":
        coupling = 0.0
    return c * (material.kprime * theta - alpha / 3.0 * coupling) * weight * length / m + alpha * weight * ed


def force_density(t_x, t_xp, Y_x, Y_xp):
    """Pairwise force density on X and on X' from the two endpoint states."""
    Y_x, Y_xp = np.asarray(Y_x, dtype=float), np.asarray(Y_xp, dtype=float)
    nx, nxp = np.linalg.norm(Y_x, axis=-1), np.linalg.norm(Y_xp, axis=-1)
    if np.any(nx == 0.0) or np.any(nxp == 0.0):
        raise CollapsedBondError("deformed bond collapsed to zero length")
    t_x, t_xp = np.asarray(t_x, dtype=float), np.asarray(t_xp, dtype=float)
    f = (t_x / nx)[..., None] * Y_x - (t_xp / nxp)[..., None] * Y_xp
    return f, -f


def strain_energy_density(theta, ed, weight, volume, m, material: MaterialModel):
    alpha = material.alpha(m)
    return 0.5 * material.kprime * theta**2 + 0.5 * alpha * np.sum(weight * ed * ed * volume)


def virial_stress(forces, Y, volume):
    """Symmetrized ``1/2 sum f (x) Y' V`` over one node's bonds."""
    forces, Y = np.atleast_2d(forces), np.atleast_2d(Y)
    s = 0.5 * np.einsum("bi,bj,b->ij", forces, Y, np.asarray(volume, dtype=float))
    return 0.5 * (s + s.T)


# ---------------------------------------------------------------------------
# whole-body evaluation
# ---------------------------------------------------------------------------

STRESS_COMPONENTS = ("xx", "yy", "zz", "xy", "xz", "yz")


@dataclass
class FieldState:
    theta: np.ndarray
    force: np.ndarray
    energy: np.ndarray | None = None
    stress: np.ndarray | None = None

    def stress_tensor(self, node):
        s = self.stress[node]
        return np.array([[s[0], s[3], s[4]], [s[3], s[1], s[5]], [s[4], s[5], s[2]]])


@dataclass(eq=False)
class PeridynamicBody:
    """Nodes, bonds, material and (static) dislocations ready for evaluation."""

    nodes: object
    neighbors: object
    material: MaterialModel
    dislocations: tuple = ()
    codes: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.material.dim != self.nodes.dim:
            raise ValueError(f"material mode {self.material.mode!r} does not match a {self.nodes.dim}D grid")
        nl = self.neighbors
        act = nl.active()
        self.dislocations = tuple(self.dislocations)
        self._off = np.ascontiguousarray(nl.offsets[act])
        self._xi = np.ascontiguousarray(nl.xi[act])
        self._len = np.ascontiguousarray(nl.length[act])
        self._w = np.ascontiguousarray(nl.weight[act])
        self._vol = np.ascontiguousarray(nl.volume[act])
        self._wxv = self._w * self._len * self._vol
        self._shape = np.asarray(self.nodes.grid_shape, dtype=np.int64)
        self._slab = max(int(np.abs(self._off[:, 0]).max()), 1)
        if self.codes is None:
            if self.dislocations:
                self.codes = crossing_table(nl, self.dislocations)
            else:
                self.codes = np.zeros((0, self.nodes.size, act.size), dtype=np.int8)
        if self.dislocations:
            self._burgers = np.array([d.burgers for d in self.dislocations], dtype=float)
        else:
            self._burgers = np.zeros((0, 3))
        m = nl.weighted_volume
        self._m = m
        self._alpha = self.material.alpha(m)
        c = self.material.dilatation_factor
        self._theta_scale = np.divide(c, m, out=np.zeros_like(m), where=m > 0)

    def dilatation(self, u):
        sums = np.empty(self.nodes.size)
        _kernels.dilatation_sums(np.ascontiguousarray(u, dtype=float), self._shape, self._off,
                                 self._xi, self._len, self._wxv, self.codes, self._burgers,
                                 self._slab, sums)
        return self._theta_scale * sums

    def _force_coef(self, theta):
        mat = self.material
        c = mat.dilatation_factor
        m = self._m
        coupling = theta * m * (1.0 / c - 1.0 / 3.0)
        num = c * (mat.kprime * theta - self._alpha / 3.0 * coupling)
        return np.divide(num, m, out=np.zeros_like(m), where=m > 0)

    def evaluate(self, u, energy: bool = False, stress: bool = False) -> FieldState:
        u = np.ascontiguousarray(u, dtype=float)
        theta = self.dilatation(u)
        n = self.nodes.size
        force = np.empty((n, 3))
        en = np.empty(n if energy else 0)
        st = np.empty((n if stress else 0, 6))
        status = np.zeros(1, dtype=np.int64)
        _kernels.pair_forces(u, self._shape, self._off, self._xi, self._len, self._w, self._vol,
                             self.codes, self._burgers, self._slab, theta,
                             self._force_coef(theta), self._alpha, force, en, st, status)
        if status[0]:
            raise CollapsedBondError("deformed bond collapsed to zero length")
        g = np.asarray(self.material.body_force)
        if np.any(g):
            force += g
        if energy:
            en += 0.5 * self.material.kprime * theta**2
        return FieldState(theta=theta, force=force,
                          energy=en if energy else None, stress=st if stress else None)

    def internal_force(self, u):
        return self.evaluate(u).force

    def total_energy(self, u, interior_only: bool = True) -> float:
        W = self.evaluate(u, energy=True).energy
        V = self.nodes.volume
        if interior_only:
            mask = self.nodes.interior
            return float(np.sum(W[mask] * V[mask]))
        return float(np.sum(W * V))


def reference_evaluate(body: PeridynamicBody, u, nodes_subset=None):
    """Node-by-node evaluation with the per-node functions (small grids only).

    Returns ``(theta, force, energy, stress)`` for every node, using explicit
    neighbor lists and per-bond crossing tests instead of the kernels.
    """
    nodes, nl, mat = body.nodes, body.neighbors, body.material
    n = nodes.size
    X = nodes.positions
    tol = 1e-9 * nodes.spacing
    bonds = []
    theta = np.zeros(n)
    for i in range(n):
        j, xi, vol, w = nl.neighbors(i)
        keep = w * vol > 0
        j, xi, vol, w = j[keep], xi[keep], vol[keep], w[keep]
        corr = np.array([bond_correction(X[i], X[i] + x, body.dislocations, tol) for x in xi]).reshape(-1, 3)
        Y = embedded_deformed_bond(xi, u[i], u[j], corr)
        e = embedded_extension(Y, xi)
        x = np.linalg.norm(xi, axis=1)
        m = nl.weighted_volume[i]
        theta[i] = dilatation(e, w, x, vol, m, mat) if m > 0 else 0.0
        bonds.append((j, xi, vol, w, Y, e, x, m))
    T = []
    energy = np.zeros(n)
    for i in range(n):
        j, xi, vol, w, Y, e, x, m = bonds[i]
        ed = deviatoric_extension(e, theta[i], x)
        T.append(scalar_force_state(theta[i], ed, w, x, vol, m, mat) if m > 0 else np.zeros_like(e))
        energy[i] = strain_energy_density(theta[i], ed, w, vol, m, mat) if m > 0 else 0.0
    force = np.zeros((n, 3))
    stress = np.zeros((n, 6))
    for i in range(n):
        j, xi, vol, w, Y, e, x, m = bonds[i]
        t_back = np.empty_like(T[i])
        Y_back = np.empty_like(Y)
        for b, jj in enumerate(j):
            jb, xib = bonds[jj][0], bonds[jj][1]
            k = np.flatnonzero((jb == i) & np.all(np.isclose(xib, -xi[b], rtol=0, atol=1e-6 * nodes.spacing), axis=1))
            t_back[b] = T[jj][k[0]]
            Y_back[b] = bonds[jj][4][k[0]]
        f, _ = force_density(T[i], t_back, Y, Y_back)
        force[i] = np.sum(f * vol[:, None], axis=0) + np.asarray(mat.body_force)
        s = virial_stress(f, Y, vol)
        stress[i] = [s[0, 0], s[1, 1], s[2, 2], s[0, 1], s[0, 2], s[1, 2]]
    return theta, force, energy, stress
