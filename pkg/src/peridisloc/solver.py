"""Static equilibrium by velocity-Verlet dynamics with FIRE adaptive damping.

Fictitious nodes are pinned to the prescribed boundary displacement; only
interior nodes move.  The mixing step uses the global unit force direction and
the global speed, and all scalar reductions are plain NumPy sums so the
trajectory does not depend on the thread count.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np


class ConvergenceError(RuntimeError):
    """Relaxation stopped before reaching the force tolerance."""

    def __init__(self, message, state):
        super().__init__(message)
        self.state = state
        self.residual = state.residual


class DivergenceError(ConvergenceError, FloatingPointError):
    """Non-finite forces or displacements appeared during relaxation."""


@dataclass(frozen=True)
class SolverParams:
    n_min: int = 5
    gamma0: float = 0.1
    f_gamma: float = 0.99
    f_dec: float = 0.5
    f_inc: float = 1.1
    dt: float | None = None
    dt_max: float | None = None
    dt_max_factor: float = math.sqrt(2.0)
    safety: float = 0.9
    rtol: float = 1e-6
    atol: float = 0.0
    max_iter: int = 200000
    log_every: int = 1

    def __post_init__(self):
        if not 0.0 < self.f_dec < 1.0 < self.f_inc:
            raise ValueError("need 0 < f_dec < 1 < f_inc")
        if not 0.0 < self.f_gamma < 1.0:
            raise ValueError("need 0 < f_gamma < 1")
        if not 0.0 < self.gamma0 < 1.0:
            raise ValueError("need 0 < gamma0 < 1")
        if self.n_min < 0 or self.max_iter < 1:
            raise ValueError("n_min must be >= 0 and max_iter >= 1")
        if not 0.0 < self.safety <= 1.0:
            raise ValueError("safety factor must lie in (0, 1]")
        if self.rtol < 0 or self.atol < 0:
            raise ValueError("tolerances must be non-negative")
        for name in ("dt", "dt_max"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")
        if not self.dt_max_factor >= 1.0:
            raise ValueError("dt_max_factor must be >= 1")


@dataclass
class SolverState:
    u: np.ndarray
    v: np.ndarray
    a: np.ndarray
    force: np.ndarray
    dt: float
    gamma: float
    n: int = 0
    power: float = 0.0
    iteration: int = 0
    residual: float = math.inf
    residual0: float = math.inf
    converged: bool = False
    history: list = field(default_factory=list, repr=False)


def _bond_stiffness(neighbors, material):
    """Per-node sum of linearized bond stiffness times effective volume.

    A bond carries ``2 w (alpha + c^2 k' x S1 / m^2)``: the deviatoric term
    from both endpoints plus the dilatational coupling, ``S1 = sum w x V``.
    """
    nl = neighbors
    m = nl.weighted_volume
    c = material.dilatation_factor
    alpha = material.alpha(m)
    s0 = np.zeros_like(m)
    s1 = np.zeros_like(m)
    for k, off in enumerate(nl.offsets):
        if nl.weight[k] * nl.volume[k] == 0:
            continue
        ok = nl._valid(off)
        s0 += ok * (nl.weight[k] * nl.volume[k])
        s1 += ok * (nl.weight[k] * nl.length[k] * nl.volume[k])
    m_safe = np.where(m > 0, m, 1.0)
    # sum_b 2 w V (alpha + c^2 k' x S1/m^2) = 2 alpha S0 + 2 c^2 k' S1^2/m^2
    return 2.0 * alpha * s0 + 2.0 * c * c * material.kprime * s1 * s1 / m_safe**2


def stable_timestep(nodes, neighbors, material, safety: float = 0.9) -> float:
    """CFL step ``safety * sqrt(2 rho / max_i sum_b C_b V_b)``."""
    if not 0.0 < safety <= 1.0:
        raise ValueError("safety factor must lie in (0, 1]")
    if np.any(neighbors.bond_counts() == 0) or np.any(neighbors.weighted_volume <= 0):
        raise ValueError("some node has no bonds")
    K = _bond_stiffness(neighbors, material)
    return float(safety * math.sqrt(2.0 * material.rho / K.max()))


def boundary_values(nodes, bc):
    """Resolve ``bc`` (callable of positions, full array or fictitious-only array)."""
    fict = nodes.fictitious_index
    if bc is None:
        raise ValueError("boundary condition undefined on the fictitious layer")
    if callable(bc):
        vals = np.asarray(bc(nodes.positions[fict]), dtype=float)
    else:
        vals = np.asarray(bc, dtype=float)
        if vals.shape == (nodes.size, 3):
            vals = vals[fict]
    if vals.shape != (fict.size, 3):
        raise ValueError(f"boundary values have shape {vals.shape}, expected {(fict.size, 3)}")
    if not np.all(np.isfinite(vals)):
        raise ValueError("boundary values are not finite at every fictitious node")
    return vals


def apply_boundary(state: SolverState, nodes, bc_values) -> SolverState:
    fict = nodes.fictitious_index
    state.u[fict] = bc_values
    state.v[fict] = 0.0
    state.a[fict] = 0.0
    return state


def residual_norm(force, nodes) -> float:
    """Largest interior force-density magnitude."""
    f = force[nodes.interior]
    if f.size == 0:
        return 0.0
    return float(np.sqrt(np.max(np.sum(f * f, axis=1))))


class ProgressLog:
    """CSV stream of iteration, residual, dt, gamma and the sign of P."""

    columns = ("iteration", "residual", "dt", "gamma", "power_sign")

    def __init__(self, stream, every: int = 1):
        self.writer = csv.writer(stream)
        self.writer.writerow(self.columns)
        self.every = max(int(every), 1)

    def record(self, state: SolverState, force=False):
        if force or state.iteration % self.every == 0:
            self.writer.writerow([state.iteration, repr(state.residual), repr(state.dt),
                                  repr(state.gamma), int(np.sign(state.power))])


def fire_step(body, state: SolverState, params: SolverParams, dt_max: float, mask) -> SolverState:
    """One velocity-Verlet step followed by the FIRE velocity update."""
    rho = body.material.rho
    dt = state.dt
    state.u[mask] += state.v[mask] * dt + 0.5 * state.a[mask] * dt * dt
    force = body.internal_force(state.u)
    force[~mask] = 0.0
    a_new = force / rho
    state.v += 0.5 * (state.a + a_new) * dt
    state.a = a_new
    state.force = force
    P = float(np.sum(force * state.v))
    state.power = P
    if P > 0.0:
        fnorm = math.sqrt(float(np.sum(force * force)))
        vnorm = math.sqrt(float(np.sum(state.v * state.v)))
        if fnorm > 0.0:
            state.v = (1.0 - state.gamma) * state.v + state.gamma * vnorm / fnorm * force
        state.n += 1
        if state.n > params.n_min:
            state.dt = min(dt * params.f_inc, dt_max)
            state.gamma *= params.f_gamma
    else:
        state.v[:] = 0.0
        state.dt = dt * params.f_dec
        state.gamma = params.gamma0
        state.n = 0
    state.iteration += 1
    return state


def relax(body, params: SolverParams | None = None, bc=None, u0=None, log=None,
          raise_on_failure: bool = True) -> SolverState:
    """Relax ``body`` to static equilibrium under displacement data ``bc``.

    ``u0`` is the initial guess (zero by default; an oracle field gives a warm
    start).  ``log`` is an optional text stream for the CSV progress log.
    Convergence: interior max force-density magnitude at most
    ``max(rtol * r0, atol)`` with ``r0`` the initial residual.
    """
    params = params or SolverParams()
    nodes = body.nodes
    n = nodes.size
    bc_values = boundary_values(nodes, bc if bc is not None else np.zeros((n, 3)))
    dt0 = params.dt or stable_timestep(nodes, body.neighbors, body.material, params.safety)
    dt_max = params.dt_max or params.dt_max_factor * dt0
    dt0 = min(dt0, dt_max)
    u = np.zeros((n, 3)) if u0 is None else np.array(u0, dtype=float, copy=True)
    if u.shape != (n, 3):
        raise ValueError(f"initial displacement has shape {u.shape}, expected {(n, 3)}")
    state = SolverState(u=u, v=np.zeros((n, 3)), a=np.zeros((n, 3)), force=np.zeros((n, 3)),
                        dt=dt0, gamma=params.gamma0)
    apply_boundary(state, nodes, bc_values)
    if nodes.dim == 2:
        state.u[:, 2] = 0.0
    mask = nodes.interior.copy()
    progress = ProgressLog(log, params.log_every) if log is not None else None

    force = body.internal_force(state.u)
    force[~mask] = 0.0
    state.force = force
    state.a = force / body.material.rho
    state.iteration = 1
    state.residual = state.residual0 = residual_norm(force, nodes)
    state.history.append(state.residual)
    if not math.isfinite(state.residual):
        raise DivergenceError("initial force field is not finite", state)
    target = max(params.rtol * state.residual0, params.atol)
    if progress:
        progress.record(state, force=True)
    while state.residual > target:
        if state.iteration >= params.max_iter:
            if progress:
                progress.record(state, force=True)
            if raise_on_failure:
                raise ConvergenceError(
                    f"no convergence after {state.iteration} iterations: residual "
                    f"{state.residual:.6g} > target {target:.6g}", state)
            return state
        # overflow is detected below and reported as a divergence
        with np.errstate(over="ignore", invalid="ignore"):
            fire_step(body, state, params, dt_max, mask)
            state.residual = residual_norm(state.force, nodes)
        state.history.append(state.residual)
        if not math.isfinite(state.residual) or not np.all(np.isfinite(state.u[mask])):
            raise DivergenceError(
                f"non-finite state at iteration {state.iteration} (dt={state.dt:.3g})", state)
        if progress:
            progress.record(state)
    state.converged = True
    if progress:
        progress.record(state, force=True)
    return state
