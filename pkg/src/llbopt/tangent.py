"""Linearized state solver (the control-to-state derivative) and the
Taylor/Lipschitz verification utilities built on it.

The tangent sweep is the exact derivative of the discrete forward map: it
uses the same IMEX structure, the same frozen base-trajectory frames for
the coupling coefficients, and the same implicit Laplacian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coils import CoilSet, ControlPath, control_norm_rms, synthesize_values
from .grid import Trajectory, VectorField, grad_sq_integral, laplacian_values
from .llb import SimConfig, cg_implicit_solve, simulate


@dataclass
class LinearizationPoint:
    """A base trajectory with the control that produced it."""

    base_traj: Trajectory
    base_control: ControlPath
    coils: CoilSet

    def __post_init__(self):
        if self.base_traj.n_steps != self.base_control.n_steps:
            raise ValueError("base trajectory and base control disagree on time nodes")
        if abs(self.base_traj.dt - self.base_control.dt) > 1e-12 * max(self.base_traj.dt, 1.0):
            raise ValueError("base trajectory and base control disagree on dt")

    @property
    def grid(self):
        return self.base_traj.grid

    @property
    def dt(self) -> float:
        return self.base_traj.dt

    @property
    def n_steps(self) -> int:
        return self.base_traj.n_steps


def _as_intensities(dU, point: LinearizationPoint) -> np.ndarray:
    vals = dU.intensities if isinstance(dU, ControlPath) else np.asarray(dU, dtype=float)
    vals = np.atleast_2d(vals)
    if vals.shape != (point.n_steps + 1, point.coils.n_coils):
        raise ValueError(
            f"control increment has shape {vals.shape}, expected "
            f"{(point.n_steps + 1, point.coils.n_coils)}"
        )
    return vals


def tangent_coupling(m: np.ndarray, lap_m: np.ndarray, u: np.ndarray,
                     z: np.ndarray, lap_z: np.ndarray) -> np.ndarray:
    """Derivative of the explicit forward terms with respect to the state:
    z x lap m + m x lap z + z x u - 2(m.z) m - (1+|m|^2) z."""
    mag_sq = np.sum(m * m, axis=-1, keepdims=True)
    m_dot_z = np.sum(m * z, axis=-1, keepdims=True)
    return (np.cross(z, lap_m) + np.cross(m, lap_z) + np.cross(z, u)
            - 2.0 * m_dot_z * m - (1.0 + mag_sq) * z)


def solve_tangent(point: LinearizationPoint, dU,
                  cg_tol: float = 1e-12, cg_max_iter: int = 500) -> Trajectory:
    """Forward sweep of the linearized system around the base trajectory.

    Starts from z(0) = 0 and drives with zeta(dU) + m x zeta(dU); returns
    the discrete directional derivative of the state with respect to the
    control, in the direction dU.
    """
    grid = point.grid
    dt = point.dt
    dvals = _as_intensities(dU, point)
    K = point.n_steps
    frames = np.zeros((K + 1,) + grid.shape + (3,))
    z = frames[0]
    for j in range(K):
        m = point.base_traj.values[j]
        lap_m = laplacian_values(grid, m)
        lap_z = laplacian_values(grid, z)
        u = synthesize_values(point.base_control.intensities[j], point.coils)
        du = synthesize_values(dvals[j], point.coils)
        expl = tangent_coupling(m, lap_m, u, z, lap_z) + du + np.cross(m, du)
        rhs = z + dt * expl
        z = cg_implicit_solve(grid, dt, rhs, tol=cg_tol, max_iter=cg_max_iter)
        if not np.all(np.isfinite(z)):
            raise ValueError(f"tangent state became non-finite at t={(j + 1) * dt:.6g}")
        frames[j + 1] = z
    return Trajectory(grid, dt, frames)


# ---------------------------------------------------------------------------
# verification utilities
# ---------------------------------------------------------------------------

def trajectory_h1_distance(a: Trajectory, b: Trajectory) -> float:
    """max over frames of the H1 norm of the difference."""
    grid = a.grid
    w = grid.cell_volume
    worst = 0.0
    for j in range(a.n_steps + 1):
        d = a.values[j] - b.values[j]
        h1_sq = w * float(np.sum(d * d)) + grad_sq_integral(grid, d)
        worst = max(worst, h1_sq)
    return float(np.sqrt(worst))


def _h1_norm_traj_minus(a: Trajectory, b: Trajectory, scaled: Trajectory,
                        scale: float) -> float:
    grid = a.grid
    w = grid.cell_volume
    worst = 0.0
    for j in range(a.n_steps + 1):
        d = a.values[j] - b.values[j] - scale * scaled.values[j]
        h1_sq = w * float(np.sum(d * d)) + grad_sq_integral(grid, d)
        worst = max(worst, h1_sq)
    return float(np.sqrt(worst))


@dataclass
class TaylorResult:
    epsilons: np.ndarray
    remainders: np.ndarray
    first_differences: np.ndarray
    remainder_order: float
    first_difference_order: float


def _loglog_slope(x: np.ndarray, y: np.ndarray) -> float:
    mask = y > 0
    if mask.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(x[mask]), np.log(y[mask]), 1)[0])


def taylor_remainder_order(point: LinearizationPoint, dU, epsilons,
                           cfg: SimConfig | None = None) -> TaylorResult:
    """Observed order of the Taylor remainder of the control-to-state map.

    For each epsilon the nonlinear system is solved at base + eps*dU and the
    remainder R(eps) = max_t ||m_eps - m_base - eps z||_H1 is formed with z
    from :func:`solve_tangent`.  A Frechet-differentiable map gives slope 2;
    the first difference ||m_eps - m_base|| gives slope 1 for contrast.
    """
    epsilons = np.asarray(sorted(epsilons, reverse=True), dtype=float)
    if cfg is None:
        cfg = SimConfig(T=point.n_steps * point.dt, dt=point.dt)
    z = solve_tangent(point, dU)
    dvals = _as_intensities(dU, point)
    m0 = point.base_traj.frame(0)
    base = point.base_traj
    wide = np.full_like(point.base_control.intensities, np.inf)
    remainders = np.empty(epsilons.shape)
    first_diffs = np.empty(epsilons.shape)
    for i, eps in enumerate(epsilons):
        perturbed = ControlPath(point.base_control.intensities + eps * dvals,
                                -wide, wide, point.dt)
        traj = simulate(m0, perturbed, point.coils, cfg)
        remainders[i] = _h1_norm_traj_minus(traj, base, z, eps)
        first_diffs[i] = trajectory_h1_distance(traj, base)
    return TaylorResult(
        epsilons=epsilons,
        remainders=remainders,
        first_differences=first_diffs,
        remainder_order=_loglog_slope(epsilons, remainders),
        first_difference_order=_loglog_slope(epsilons, first_diffs),
    )


@dataclass
class LipschitzEstimate:
    value: float
    informative_pairs: int
    total_pairs: int

    @property
    def informative(self) -> bool:
        return self.informative_pairs > 0


def estimate_state_lipschitz(m0: VectorField, coils: CoilSet, cfg: SimConfig,
                             pairs, lower=-np.inf, upper=np.inf) -> LipschitzEstimate:
    """Empirical lower bound for the state Lipschitz ratio.

    ``pairs`` is an iterable of (U1, U2) intensity arrays.  Returns the max
    over informative pairs of ||G(U1) - G(U2)||_{max-t H1} / ||U1 - U2||_rms;
    pairs with U1 = U2 are skipped.
    """
    best = 0.0
    used = 0
    total = 0
    for U1, U2 in pairs:
        total += 1
        U1 = np.atleast_2d(np.asarray(U1, dtype=float))
        U2 = np.atleast_2d(np.asarray(U2, dtype=float))
        denom = control_norm_rms(U1 - U2, cfg.dt)
        if denom == 0.0:
            continue
        used += 1
        t1 = simulate(m0, ControlPath(U1, lower, upper, cfg.dt), coils, cfg)
        t2 = simulate(m0, ControlPath(U2, lower, upper, cfg.dt), coils, cfg)
        best = max(best, trajectory_h1_distance(t1, t2) / denom)
    return LipschitzEstimate(best, used, total)
