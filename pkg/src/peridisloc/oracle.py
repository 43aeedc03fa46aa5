"""Classical isotropic elasticity references for Volterra dislocations.

Straight dislocations use the closed-form edge/screw solutions evaluated in a
local frame whose arctangent branch cut lies along the dislocation's cut.
Circular loops use the Burgers displacement formula (disc solid angle plus two
line integrals) and the analytic gradient of the same integrals for stress,
integrated over the loop angle with an error-controlled periodic trapezoid rule.
"""
from __future__ import annotations

import numpy as np

from .dislocation import Disc, HalfPlane, Rectangle


def _as_points(points):
    p = np.atleast_2d(np.asarray(points, dtype=float))
    if p.shape[1] < 3:
        p = np.pad(p, ((0, 0), (0, 3 - p.shape[1])))
    return p


def voigt(sigma):
    """(..., 3, 3) -> (..., 6) in the order xx, yy, zz, xy, xz, yz."""
    return np.stack([sigma[..., 0, 0], sigma[..., 1, 1], sigma[..., 2, 2],
                     sigma[..., 0, 1], sigma[..., 0, 2], sigma[..., 1, 2]], axis=-1)


def hooke(grad, mu, lam):
    """Stress from displacement gradient ``grad[..., i, j] = du_i/dx_j``."""
    eps = 0.5 * (grad + np.swapaxes(grad, -1, -2))
    tr = np.trace(eps, axis1=-2, axis2=-1)
    return lam * tr[..., None, None] * np.eye(3) + 2.0 * mu * eps


class ElasticField:
    """Displacement and stress of a classical dislocation configuration."""

    def displacement(self, points) -> np.ndarray:
        raise NotImplementedError

    def stress(self, points) -> np.ndarray:
        raise NotImplementedError

    def __add__(self, other):
        return SuperposedField([self, other])


class SuperposedField(ElasticField):
    def __init__(self, fields):
        self.fields = []
        for f in fields:
            self.fields.extend(f.fields if isinstance(f, SuperposedField) else [f])

    def displacement(self, points):
        pts = _as_points(points)
        out = np.zeros((len(pts), 3))
        for f in self.fields:
            out += f.displacement(pts)
        return out

    def stress(self, points):
        pts = _as_points(points)
        out = np.zeros((len(pts), 3, 3))
        for f in self.fields:
            out += f.stress(pts)
        return out


class ZeroField(ElasticField):
    def displacement(self, points):
        return np.zeros((len(_as_points(points)), 3))

    def stress(self, points):
        return np.zeros((len(_as_points(points)), 3, 3))


# ---------------------------------------------------------------------------
# straight dislocations
# ---------------------------------------------------------------------------

def edge_displacement(x, y, b, nu):
    """Edge dislocation along z with Burgers vector (b, 0, 0); cut along -x."""
    r2 = x * x + y * y
    ux = b / (2 * np.pi) * (np.arctan2(y, x) + x * y / (2 * (1 - nu) * r2))
    uy = -b / (2 * np.pi) * ((1 - 2 * nu) / (4 * (1 - nu)) * np.log(r2)
                             + (x * x - y * y) / (4 * (1 - nu) * r2))
    return ux, uy


def edge_stress(x, y, b, nu, mu):
    """(sxx, syy, sxy, szz) of the edge dislocation in plane strain."""
    r4 = (x * x + y * y) ** 2
    D = mu * b / (2 * np.pi * (1 - nu))
    sxx = -D * y * (3 * x * x + y * y) / r4
    syy = D * y * (x * x - y * y) / r4
    sxy = D * x * (x * x - y * y) / r4
    return sxx, syy, sxy, nu * (sxx + syy)


def screw_displacement(x, y, b):
    return b / (2 * np.pi) * np.arctan2(y, x)


def screw_stress(x, y, b, mu):
    r2 = x * x + y * y
    return -mu * b * y / (2 * np.pi * r2), mu * b * x / (2 * np.pi * r2)


class StraightDislocationField(ElasticField):
    """Mixed straight dislocation; edge part in the glide plane, screw along the line.

    Local frame: ``e1`` points away from the cut, ``e3`` is the line direction
    and ``e2 = e3 x e1``, so the two-argument arctangent jumps by ``2 pi`` across
    the cut and ``u(e2 side) - u(-e2 side) = b``.
    """

    def __init__(self, geometry, burgers, nu, mu, dim=3, core_radius=0.0, plane_tol=0.0):
        if isinstance(geometry, HalfPlane):
            origin, d, t = geometry.core, geometry.cut_direction, geometry.line_direction
        elif isinstance(geometry, Rectangle):
            origin, d, t = geometry.corner, geometry.cut_direction, geometry.line_direction
        else:
            raise TypeError(f"not a straight cut: {type(geometry).__name__}")
        e1 = -d
        e2 = np.cross(t, e1)
        self.frame = np.stack([e1, e2, t])
        self.origin = np.asarray(origin, dtype=float)
        self.burgers = np.asarray(burgers, dtype=float)
        local_b = self.frame @ self.burgers
        self.b_edge, self.b_screw = local_b[0], local_b[2]
        if dim == 2:
            self.b_screw = 0.0
        self.nu, self.mu, self.dim = nu, mu, dim
        self.core_radius = core_radius
        self.plane_tol = plane_tol

    @property
    def line_direction(self):
        return self.frame[2]

    def _local(self, points):
        q = (_as_points(points) - self.origin) @ self.frame.T
        r = np.hypot(q[:, 0], q[:, 1])
        if np.any(r <= self.core_radius):
            raise ValueError("evaluation point on the dislocation line (singular)")
        # points on the cut plane belong to its positive side, as in the simulator
        y = np.where(np.abs(q[:, 1]) <= self.plane_tol, 0.0, q[:, 1])
        return q[:, 0], y

    def displacement(self, points):
        x, y = self._local(points)
        loc = np.zeros((len(x), 3))
        if self.b_edge:
            loc[:, 0], loc[:, 1] = edge_displacement(x, y, self.b_edge, self.nu)
        if self.b_screw:
            loc[:, 2] = screw_displacement(x, y, self.b_screw)
        return loc @ self.frame

    def stress(self, points):
        x, y = self._local(points)
        loc = np.zeros((len(x), 3, 3))
        if self.b_edge:
            sxx, syy, sxy, szz = edge_stress(x, y, self.b_edge, self.nu, self.mu)
            loc[:, 0, 0], loc[:, 1, 1], loc[:, 2, 2] = sxx, syy, szz
            loc[:, 0, 1] = loc[:, 1, 0] = sxy
        if self.b_screw:
            sxz, syz = screw_stress(x, y, self.b_screw, self.mu)
            loc[:, 0, 2] = loc[:, 2, 0] = sxz
            loc[:, 1, 2] = loc[:, 2, 1] = syz
        return np.einsum("ai,pab,bj->pij", self.frame, loc, self.frame)


def edge_fields(b, nu, mu):
    """Edge dislocation at the origin, line +z, cut along -x, Burgers (b, 0, 0)."""
    geom = HalfPlane([0, 0, 0], [-1, 0, 0], [0, 1, 0])
    return StraightDislocationField(geom, [b, 0, 0], nu, mu, dim=2)


def screw_fields(b, mu, nu=0.3):
    """Screw dislocation on the z axis, cut along -x, Burgers (0, 0, b)."""
    geom = HalfPlane([0, 0, 0], [-1, 0, 0], [0, 1, 0])
    return StraightDislocationField(geom, [0, 0, b], nu, mu, dim=3)


# ---------------------------------------------------------------------------
# circular loop
# ---------------------------------------------------------------------------

class LoopField(ElasticField):
    """Planar circular Volterra loop bounding a disc cut.

    Displacement: ``u = b S + (1/4pi) loop(b x t)/rho + 1/(8pi(1-nu)) grad loop((b x r).t)/rho``
    with ``S`` the disc solid angle over ``4 pi`` (jump +1 toward the disc
    normal), ``t`` the counter-clockwise tangent about that normal and
    ``r = x - x'``.  Stress is Hooke's law on the analytic gradient.
    """

    def __init__(self, disc: Disc, burgers, nu, mu, rtol=1e-10, chunk=2048, guard=1e-3,
                 plane_tol=0.0):
        self.disc = disc
        n = disc.normal
        helper = np.array([1.0, 0, 0]) if abs(n[0]) < 0.9 else np.array([0, 1.0, 0])
        e1 = helper - (helper @ n) * n
        e1 /= np.linalg.norm(e1)
        self.frame = np.stack([e1, np.cross(n, e1), n])
        self.R = float(disc.radius)
        self.b_local = self.frame @ np.asarray(burgers, dtype=float)
        self.nu, self.mu = nu, mu
        self.lam = 2 * mu * nu / (1 - 2 * nu)
        self.rtol = rtol
        self.chunk = chunk
        self.guard = guard
        self.plane_tol = plane_tol

    def _local(self, points):
        q = (_as_points(points) - self.disc.center) @ self.frame.T
        rho_in = np.hypot(q[:, 0], q[:, 1])
        dist = np.hypot(rho_in - self.R, q[:, 2])
        if np.any(dist < self.guard * self.R):
            raise ValueError("evaluation point too close to the loop line")
        return q, dist

    def _string_directions(self, q):
        """Dirac-string ray per point, kept at least ``dist/sqrt(2)`` off the loop."""
        rho_in = np.hypot(q[:, 0], q[:, 1])
        s = np.zeros_like(q)
        vertical = np.abs(rho_in - self.R) >= np.abs(q[:, 2])
        s[vertical, 2] = 1.0
        h = ~vertical
        safe = np.where(rho_in[h] > 0, rho_in[h], 1.0)
        s[h, 0] = np.where(rho_in[h] > 0, q[h, 0] / safe, 1.0)
        s[h, 1] = np.where(rho_in[h] > 0, q[h, 1] / safe, 0.0)
        return s

    def _samples(self, q, s, theta, grad):
        """Integrand summed over the angles ``theta``; shape (points, width)."""
        R, b = self.R, self.b_local
        c1 = 1.0 / (4 * np.pi)
        c2 = 1.0 / (8 * np.pi * (1 - self.nu))
        ct, st = np.cos(theta), np.sin(theta)
        zero = np.zeros_like(theta)
        xp = np.stack([R * ct, R * st, zero], axis=1)
        t = np.stack([-R * st, R * ct, zero], axis=1)
        c = np.cross(t, b)
        bxt = np.cross(b, t)
        r = q[:, None, :] - xp[None, :, :]
        rho2 = np.einsum("pki,pki->pk", r, r)
        rho = np.sqrt(rho2)
        inv3 = 1.0 / (rho2 * rho)
        rc = np.einsum("pki,ki->pk", r, c)
        if not grad:
            # solid angle over 4 pi with a string along +s from the point: R' = x' - x = -r
            sxr = np.cross(s[:, None, :], -r)
            num = np.einsum("pki,ki->pk", sxr, t)
            solid = num / (rho * (rho + np.einsum("pki,pi->pk", r, s))) / (4 * np.pi)
            line = (c1 * bxt[None] / rho[..., None]
                    + c2 * (c[None] / rho[..., None] - r * (rc * inv3)[..., None]))
            return np.concatenate([solid.sum(1)[:, None], line.sum(1)], axis=1)
        txr = np.cross(t[None], r)
        gS = -(txr * inv3[..., None]).sum(1) / (4 * np.pi)
        ri3 = r * inv3[..., None]
        g1 = -c1 * np.einsum("ki,pkj->pij", bxt, ri3)
        cr = np.einsum("ki,pkj->pij", c, ri3)
        hess = (-(cr + np.swapaxes(cr, 1, 2))
                - np.eye(3)[None] * (rc * inv3).sum(1)[:, None, None]
                + 3 * np.einsum("pki,pkj,pk->pij", r, r, rc * inv3 / rho2))
        g = b[None, :, None] * gS[:, None, :] + g1 + c2 * hess
        return g.reshape(len(q), 9)

    def _trapezoid(self, q, s, grad, n):
        """Even- and odd-indexed partial sums of the n-point periodic rule."""
        width = 9 if grad else 4
        block = max(8, min(n // 2, 200000 // max(len(q), 1)))
        even = np.zeros((len(q), width))
        odd = np.zeros((len(q), width))
        k = np.arange(n)
        for start in range(0, n, 2 * block):
            kk = k[start:start + 2 * block]
            th = 2 * np.pi * kk / n
            ev = kk % 2 == 0
            even += self._samples(q, s, th[ev], grad)
            odd += self._samples(q, s, th[~ev], grad)
        return even, odd

    def _integrate(self, points, grad):
        """Trapezoid rule, doubling per point until half/full rules agree.

        The integrands are periodic and analytic, so the error after doubling
        is roughly the square of the half-rule discrepancy; the stopping test
        uses ``sqrt(rtol)`` on that discrepancy.
        """
        q, dist = self._local(points)
        s = self._string_directions(q)
        order = np.argsort(dist)
        width = 9 if grad else 4
        out = np.empty((len(q), width))
        tol = np.sqrt(self.rtol)
        for start in range(0, len(q), self.chunk):
            idx = order[start:start + self.chunk]
            n = int(2 ** np.ceil(np.log2(max(64.0, 8.0 * self.R / dist[idx].min()))))
            todo = idx
            while todo.size:
                even, odd = self._trapezoid(q[todo], s[todo], grad, n)
                full = (even + odd) * (2 * np.pi / n)
                half = even * (4 * np.pi / n)
                scale = np.abs(full).max(axis=1)
                scale = np.maximum(scale, 1e-3 * scale.max() + 1e-300)
                ok = np.abs(full - half).max(axis=1) <= tol * scale
                if n >= 2 ** 22:
                    raise RuntimeError("loop quadrature failed to converge")
                out[todo[ok]] = full[ok]
                todo = todo[~ok]
                n *= 2
        if not grad:
            out[:, 0] = out[:, 0] - np.round(out[:, 0])
            on_disc = (np.abs(q[:, 2]) <= self.plane_tol) & (np.hypot(q[:, 0], q[:, 1]) < self.R)
            out[:, 0] = np.where(on_disc | (out[:, 0] == -0.5), 0.5, out[:, 0])
        return q, out

    def displacement(self, points):
        _, vals = self._integrate(points, grad=False)
        loc = vals[:, :1] * self.b_local[None, :] + vals[:, 1:]
        return loc @ self.frame

    def displacement_gradient(self, points):
        _, vals = self._integrate(points, grad=True)
        g = vals.reshape(-1, 3, 3)
        return np.einsum("ai,pab,bj->pij", self.frame, g, self.frame)

    def stress(self, points):
        return hooke(self.displacement_gradient(points), self.mu, self.lam)


def loop_fields(b, R, nu, mu, tol=1e-10, center=(0, 0, 0), normal=(0, 0, 1)):
    """Circular loop of radius ``R``; ``b`` given as a vector in the loop plane."""
    b = np.asarray(b, dtype=float)
    if b.ndim == 0:
        b = np.array([float(b), 0.0, 0.0])
    return LoopField(Disc(center, R, normal), b, nu, mu, rtol=tol)


def oracle_for(dislocations, material, tol=1e-10, plane_tol=0.0) -> ElasticField:
    """Superposed classical field of all dislocations (linear elasticity).

    ``plane_tol`` is the distance below which a point counts as lying on a cut
    (assigned to its positive side).
    """
    fields = []
    for d in dislocations:
        if isinstance(d.geometry, Disc):
            fields.append(LoopField(d.geometry, d.burgers, material.nu, material.mu, rtol=tol,
                                    plane_tol=plane_tol))
        else:
            fields.append(StraightDislocationField(d.geometry, d.burgers, material.nu,
                                                   material.mu, dim=material.dim,
                                                   plane_tol=plane_tol))
    if not fields:
        return ZeroField()
    return fields[0] if len(fields) == 1 else SuperposedField(fields)


# ---------------------------------------------------------------------------
# driving forces and comparison metrics
# ---------------------------------------------------------------------------

def pk_force(sigma, b, xi):
    """Peach-Koehler force per unit length ``(sigma . b) x xi``."""
    sigma = np.asarray(sigma, dtype=float)
    b = np.asarray(b, dtype=float)
    xi = np.asarray(xi, dtype=float)
    return np.cross(np.einsum("...ij,...j->...i", sigma, b), xi)


def driving_force_eg(samples, line_length: float = 1.0):
    """Central-difference energy gradient force ``-(E(L+h) - E(L-h)) / 2h``.

    ``samples`` is a sequence of (position, energy).  Returns the interior
    positions and the force per unit line length at each.
    """
    pos = np.array([p for p, _ in samples], dtype=float)
    en = np.array([e for _, e in samples], dtype=float)
    if len(pos) < 3:
        raise ValueError("need at least 3 energy samples")
    order = np.argsort(pos)
    pos, en = pos[order], en[order]
    h = np.diff(pos)
    if not np.allclose(h, h[0], rtol=1e-9, atol=0.0):
        raise ValueError("energy samples must be equally spaced")
    force = -(en[2:] - en[:-2]) / (2 * h[0]) / line_length
    return pos[1:-1], force


def relative_l2_diff(u_num, u_ref, volumes=None) -> float:
    u_num = np.asarray(u_num, dtype=float)
    u_ref = np.asarray(u_ref, dtype=float)
    V = np.ones(len(u_ref)) if volumes is None else np.asarray(volumes, dtype=float)
    den = np.sum(np.sum(u_ref**2, axis=-1) * V)
    if den == 0:
        raise ValueError("reference field has zero norm")
    num = np.sum(np.sum((u_num - u_ref) ** 2, axis=-1) * V)
    return float(np.sqrt(num / den))
