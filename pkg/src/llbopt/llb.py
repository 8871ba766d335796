"""Forward solver for the controlled Landau-Lifshitz-Bloch state system.

Time stepping is first-order IMEX Euler: the Laplacian is implicit
(unconditionally stable diffusion), every other term explicit at the old
time level.  Each implicit stage solves the SPD system (I - dt*lap) m = rhs
by matrix-free conjugate gradients.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp

from .coils import CoilSet, ControlPath, synthesize_values
from .grid import (
    Grid,
    Trajectory,
    VectorField,
    cosine_modes,
    grad_sq_integral,
    laplacian_values,
    time_integral,
)


class ImplicitSolveError(RuntimeError):
    """Inner conjugate-gradient solve failed to converge."""


class BlowUpError(RuntimeError):
    """State left the finite / bounded regime; carries the time reached."""

    def __init__(self, message: str, time: float):
        super().__init__(f"{message} at t={time:.6g}")
        self.time = time


class StalledDescentError(RuntimeError):
    """Armijo line search exhausted its halving budget."""


@dataclass
class SimConfig:
    """Time-stepping configuration shared by the forward/tangent/adjoint sweeps.

    ``source``, when set, is a manufactured forcing added to the right-hand
    side for convergence studies: a callable t -> values array on the grid.
    It is not part of the physical model and runs that use it should say so.
    """

    T: float
    dt: float
    scheme: str = "imex_euler"
    source: Optional[Callable[[float], np.ndarray]] = None
    diagnostics_every: int = 0
    grid: Optional[Grid] = None
    cg_tol: float = 1e-12
    cg_max_iter: int = 500
    blowup_threshold: float = 1e6
    warn_dt_factor: float = 0.5

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.T <= 0:
            raise ValueError("T must be positive")
        if self.scheme != "imex_euler":
            raise ValueError(f"unknown scheme {self.scheme!r}")
        steps = round(self.T / self.dt)
        if steps < 1 or abs(steps * self.dt - self.T) > 1e-12 * max(self.T, 1.0):
            raise ValueError(f"dt={self.dt} does not divide T={self.T}")

    @property
    def n_steps(self) -> int:
        return round(self.T / self.dt)


def cg_implicit_solve(grid: Grid, dt: float, rhs: np.ndarray,
                      tol: float = 1e-12, max_iter: int = 500,
                      x0: Optional[np.ndarray] = None) -> np.ndarray:
    """Solve (I - dt*lap_h) x = rhs by conjugate gradients.

    The operator is symmetric positive definite under the cell-sum inner
    product; the three vector components decouple and are solved jointly.
    Convergence is relative residual <= tol.
    """
    rhs_norm = np.sqrt(float(np.sum(rhs * rhs)))
    if rhs_norm == 0.0:
        return np.zeros_like(rhs)

    def apply(v):
        return v - dt * laplacian_values(grid, v)

    x = rhs.copy() if x0 is None else x0.copy()
    r = rhs - apply(x)
    p = r.copy()
    rs = float(np.sum(r * r))
    target = (tol * rhs_norm) ** 2
    if rs <= target:
        return x
    for _ in range(max_iter):
        ap = apply(p)
        alpha = rs / float(np.sum(p * ap))
        x += alpha * p
        r -= alpha * ap
        rs_new = float(np.sum(r * r))
        if rs_new <= target:
            return x
        p = r + (rs_new / rs) * p
        rs = rs_new
    raise ImplicitSolveError(
        f"implicit solve failure: CG did not reach rel. residual {tol:g} "
        f"in {max_iter} iterations"
    )


def _reaction(m: np.ndarray, lap_m: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Explicit right-hand side m x lap m + m x u - (1+|m|^2) m + u."""
    mag_sq = np.sum(m * m, axis=-1, keepdims=True)
    return np.cross(m, lap_m) + np.cross(m, u) - (1.0 + mag_sq) * m + u


def step_values(grid: Grid, m: np.ndarray, u: np.ndarray, dt: float,
                cg_tol: float = 1e-12, cg_max_iter: int = 500,
                source: Optional[np.ndarray] = None) -> np.ndarray:
    lap_m = laplacian_values(grid, m)
    rhs = m + dt * _reaction(m, lap_m, u)
    if source is not None:
        rhs = rhs + dt * source
    return cg_implicit_solve(grid, dt, rhs, tol=cg_tol, max_iter=cg_max_iter)


def step(m: VectorField, u: VectorField, dt: float,
         cg_tol: float = 1e-12, cg_max_iter: int = 500) -> VectorField:
    """One IMEX Euler update of the LLB state."""
    if m.grid != u.grid:
        raise ValueError("state and control fields must share a grid")
    if dt <= 0:
        raise ValueError("dt must be positive")
    return VectorField(m.grid, step_values(m.grid, m.values, u.values, dt,
                                           cg_tol=cg_tol, cg_max_iter=cg_max_iter))


def simulate(m0: VectorField, U: ControlPath, coils: CoilSet, cfg: SimConfig) -> Trajectory:
    """March the controlled LLB system from t=0 to t=T.

    Frame j of the result is the state at t_j = j*dt; the control field for
    the step t_j -> t_{j+1} is synthesized at node j.
    """
    grid = m0.grid
    if cfg.grid is not None and cfg.grid != grid:
        raise ValueError("config grid does not match initial-data grid")
    if coils.n_coils and coils.grid != grid:
        raise ValueError("coil/grid incompatibility")
    K = cfg.n_steps
    if U.n_steps != K:
        raise ValueError(f"control has {U.n_steps} steps, config expects {K}")
    if cfg.source is not None:
        warnings.warn(
            "manufactured forcing is active: this run verifies the scheme, "
            "not the physical model", RuntimeWarning)

    frames = np.empty((K + 1,) + grid.shape + (3,))
    frames[0] = m0.values
    warned = False
    for j in range(K):
        m = frames[j]
        mag_max = float(np.max(np.sum(m * m, axis=-1))) if m.size else 0.0
        if not warned and cfg.dt * (1.0 + mag_max) > cfg.warn_dt_factor:
            warnings.warn(
                f"explicit reaction is marginally resolved: dt*(1+|m|^2) = "
                f"{cfg.dt * (1.0 + mag_max):.3g} at t={j * cfg.dt:.6g}",
                RuntimeWarning,
            )
            warned = True
        u = synthesize_values(U.intensities[j], coils)
        src = cfg.source(j * cfg.dt) if cfg.source is not None else None
        new = step_values(grid, m, u, cfg.dt, cg_tol=cfg.cg_tol,
                          cg_max_iter=cfg.cg_max_iter, source=src)
        if not np.all(np.isfinite(new)) or np.max(np.abs(new)) > cfg.blowup_threshold:
            raise BlowUpError("state blow-up", (j + 1) * cfg.dt)
        frames[j + 1] = new
    return Trajectory(grid, cfg.dt, frames)


def energy_ledger(traj: Trajectory, U: ControlPath, coils: CoilSet) -> dict:
    """Per-frame energy bookkeeping for the dissipation inequality.

    Returns arrays over frames: t, ``l2_sq`` = |m|_L2^2, ``grad_sq`` =
    |grad m|_L2^2, ``l4_quart`` = |m|_L4^4, ``u_sq`` = |u|_L2^2, and the
    integrated defect

        D(t) = |m(t)|^2 + int_0^t (|grad m|^2 + |m|^2 + |m|_L4^4)
               - |m_0|^2 - int_0^t |u|^2,

    which is <= 0 for the exact evolution.
    """
    grid = traj.grid
    K = traj.n_steps
    w = grid.cell_volume
    l2_sq = np.empty(K + 1)
    grad_sq = np.empty(K + 1)
    l4_quart = np.empty(K + 1)
    u_sq = np.empty(K + 1)
    for j in range(K + 1):
        m = traj.values[j]
        mag_sq = np.sum(m * m, axis=-1)
        l2_sq[j] = w * float(np.sum(mag_sq))
        grad_sq[j] = grad_sq_integral(grid, m)
        l4_quart[j] = w * float(np.sum(mag_sq**2))
        u = synthesize_values(U.intensities[j], coils)
        u_sq[j] = w * float(np.sum(u * u))

    dissip = grad_sq + l2_sq + l4_quart
    cum_dissip = _cumulative_trapezoid(dissip, traj.dt)
    cum_input = _cumulative_trapezoid(u_sq, traj.dt)
    defect = l2_sq + cum_dissip - l2_sq[0] - cum_input
    return {
        "t": traj.times,
        "l2_sq": l2_sq,
        "grad_sq": grad_sq,
        "l4_quart": l4_quart,
        "u_sq": u_sq,
        "defect": defect,
    }


def _cumulative_trapezoid(series: np.ndarray, dt: float) -> np.ndarray:
    out = np.zeros_like(series)
    out[1:] = np.cumsum(0.5 * dt * (series[1:] + series[:-1]))
    return out


# ---------------------------------------------------------------------------
# cosine-Galerkin oracle
# ---------------------------------------------------------------------------

def simulate_galerkin(m0: VectorField, U: ControlPath, coils: CoilSet,
                      cfg: SimConfig, n_modes: int,
                      rtol: float = 1e-10, atol: float = 1e-12) -> Trajectory:
    """Integrate the mode-truncated system with a high-accuracy ODE method.

    The state is expanded in the first ``n_modes`` discrete cosine modes
    (exact eigenvectors of the grid Laplacian); the nonlinear right-hand
    side is evaluated on the grid and projected back, and the coefficient
    ODEs d a_k/dt = F_k(t, a) are integrated by adaptive Runge-Kutta.  This
    is a time-integration cross-check for the IMEX sweep at matched spatial
    discretization, not an independent spatial discretization.
    """
    grid = m0.grid
    modes, _ = cosine_modes(grid, n_modes)
    w = grid.cell_volume
    K = cfg.n_steps
    times = np.arange(K + 1) * cfg.dt
    intensities = U.intensities

    def control_at(t: float) -> np.ndarray:
        if coils.n_coils == 0:
            return np.zeros(grid.shape + (3,))
        # piecewise-linear interpolation of each coil intensity
        Ut = np.array([np.interp(t, times, intensities[:, i])
                       for i in range(coils.n_coils)])
        return synthesize_values(Ut, coils)

    def synth(a_flat: np.ndarray) -> np.ndarray:
        a = a_flat.reshape(n_modes, 3)
        return np.tensordot(a, modes, axes=(0, 0)).transpose(
            tuple(range(1, grid.dim + 1)) + (0,))

    def project(field_vals: np.ndarray) -> np.ndarray:
        # a_k,c = <field_c, mode_k> under the cell-sum inner product
        flat_modes = modes.reshape(n_modes, -1)
        flat_field = field_vals.reshape(-1, 3)
        return w * flat_modes @ flat_field

    def rhs(t: float, a_flat: np.ndarray) -> np.ndarray:
        m = synth(a_flat)
        lap_m = laplacian_values(grid, m)
        u = control_at(t)
        f = lap_m + _reaction(m, lap_m, u)
        if cfg.source is not None:
            f = f + cfg.source(t)
        return project(f).ravel()

    a0 = project(m0.values).ravel()
    sol = solve_ivp(rhs, (0.0, cfg.T), a0, method="DOP853",
                    t_eval=times, rtol=rtol, atol=atol)
    if not sol.success:
        raise RuntimeError(f"Galerkin oracle integration failed: {sol.message}")
    frames = np.empty((K + 1,) + grid.shape + (3,))
    for j in range(K + 1):
        frames[j] = synth(sol.y[:, j])
    return Trajectory(grid, cfg.dt, frames)
