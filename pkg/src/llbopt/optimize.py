"""Tracking cost, adjoint-based reduced gradient, and projected-gradient
descent over the box-constrained coil intensities.

The stationary points of the projected iteration are exactly the fixed
points of the clamp formula U_i = P_[a,b](-pairing_i), so the optimizer's
stopping metric and the first-order certificate measure the same residual.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from .adjoint import tracking_adjoint
from .coils import (
    CoilSet,
    ControlPath,
    control_inner_rms,
    control_norm_rms,
    project_box,
)
from .grid import Trajectory, VectorField, time_integral
from .llb import SimConfig, StalledDescentError, simulate


@dataclass
class TrackingTargets:
    """Desired evolution m_d (per frame) and terminal target m_Omega."""

    m_d: np.ndarray      # (K+1,) + grid.shape + (3,)
    m_omega: np.ndarray  # grid.shape + (3,)

    def __post_init__(self):
        self.m_d = np.asarray(self.m_d, dtype=float)
        self.m_omega = np.asarray(self.m_omega, dtype=float)

    @classmethod
    def constant(cls, grid, vec, n_steps: int) -> "TrackingTargets":
        frame = np.broadcast_to(np.asarray(vec, dtype=float), grid.shape + (3,))
        m_d = np.broadcast_to(frame, (n_steps + 1,) + frame.shape).copy()
        return cls(m_d, frame.copy())

    @classmethod
    def from_trajectory(cls, traj: Trajectory) -> "TrackingTargets":
        return cls(traj.values.copy(), traj.values[-1].copy())

    def check_compatible(self, traj: Trajectory):
        if self.m_d.shape != traj.values.shape:
            raise ValueError(
                f"target/grid incompatibility: m_d frames {self.m_d.shape} vs "
                f"trajectory {traj.values.shape}"
            )
        if self.m_omega.shape != traj.values.shape[1:]:
            raise ValueError(
                f"target/grid incompatibility: m_Omega shape {self.m_omega.shape} "
                f"vs field {traj.values.shape[1:]}"
            )


@dataclass
class CostBreakdown:
    tracking: float
    terminal: float
    control: float

    @property
    def total(self) -> float:
        return self.tracking + self.terminal + self.control


@dataclass
class OptimizeConfig:
    """Problem data and solver knobs for the reduced-cost optimization."""

    m0: VectorField
    sim: SimConfig
    tol: float = 1e-6
    max_iters: int = 500
    armijo_c1: float = 1e-4
    step0: float = 1.0
    max_halvings: int = 40


def evaluate_cost(traj: Trajectory, U: ControlPath, targets: TrackingTargets) -> CostBreakdown:
    """The three-term cost: tracking + terminal + control energy."""
    targets.check_compatible(traj)
    grid = traj.grid
    w = grid.cell_volume
    diff = traj.values - targets.m_d
    per_frame = w * np.sum(diff.reshape(diff.shape[0], -1) ** 2, axis=1)
    tracking = 0.5 * time_integral(per_frame, traj.dt)
    dT = traj.values[-1] - targets.m_omega
    terminal = 0.5 * w * float(np.sum(dT * dT))
    control = 0.5 * control_norm_rms(U.intensities, U.dt) ** 2
    return CostBreakdown(tracking, terminal, control)


def coil_pairing(traj: Trajectory, phi: Trajectory, coils: CoilSet) -> np.ndarray:
    """Per-frame integrals int (phi x m + phi) . B_i dx, shape (K+1, N)."""
    K = traj.n_steps
    N = coils.n_coils
    out = np.empty((K + 1, N))
    if N == 0:
        return out
    w = traj.grid.cell_volume
    geom_flat = coils.geometries.reshape(N, -1)
    for j in range(K + 1):
        f = np.cross(phi.values[j], traj.values[j]) + phi.values[j]
        out[j] = w * (geom_flat @ f.ravel())
    return out


def _forward_cost(U: ControlPath, coils: CoilSet, targets: TrackingTargets,
                  cfg: OptimizeConfig):
    traj = simulate(cfg.m0, U, coils, cfg.sim)
    return evaluate_cost(traj, U, targets), traj


def _gradient_state(U: ControlPath, coils: CoilSet, targets: TrackingTargets,
                    cfg: OptimizeConfig):
    cost, traj = _forward_cost(U, coils, targets, cfg)
    phi = tracking_adjoint(traj, U, coils, targets.m_d, targets.m_omega,
                           cg_tol=cfg.sim.cg_tol, cg_max_iter=cfg.sim.cg_max_iter)
    grad = U.intensities + coil_pairing(traj, phi, coils)
    return grad, cost, traj, phi


def reduced_gradient(U: ControlPath, coils: CoilSet, targets: TrackingTargets,
                     cfg: OptimizeConfig) -> np.ndarray:
    """Gradient of the reduced cost in the summed-componentwise-L2 geometry:
    g_i(t_j) = U_i(t_j) + int (phi x m + phi) . B_i dx."""
    grad, _, _, _ = _gradient_state(U, coils, targets, cfg)
    return grad


def natural_residual(U: ControlPath, grad: np.ndarray, step: float = 1.0) -> float:
    """Scale-free fixed-point residual ||U - P_box(U - step*grad)|| / sqrt(T)."""
    trial = project_box(U.intensities - step * grad, U.lower, U.upper)
    return control_norm_rms(U.intensities - trial, U.dt) / np.sqrt(U.final_time)


@dataclass
class IterationRecord:
    iteration: int
    cost: float
    tracking: float
    terminal: float
    control: float
    residual: float
    step: float


def projected_gradient_descent(U0: ControlPath, coils: CoilSet,
                               targets: TrackingTargets, cfg: OptimizeConfig):
    """Projected gradient with Armijo backtracking.

    Iterates U <- P_box(U - s * grad) with s halved from ``step0`` until the
    sufficient-decrease test passes; stops when the natural residual at the
    reference step drops below ``tol`` or the iteration budget runs out.

    Returns
    -------
    U : ControlPath
        Final iterate (feasible).
    history : list[IterationRecord]
        One record per visited iterate, including the last.
    """
    U = U0 if U0.is_feasible() else U0.projected()
    history: list[IterationRecord] = []
    grad, cost, _, _ = _gradient_state(U, coils, targets, cfg)

    for it in range(cfg.max_iters + 1):
        residual = natural_residual(U, grad)
        # .step is overwritten with the accepted step once the next iterate
        # exists; it stays 0 on the final record
        history.append(IterationRecord(it, cost.total, cost.tracking,
                                       cost.terminal, cost.control, residual,
                                       0.0))
        if residual <= cfg.tol or it == cfg.max_iters:
            break

        s = cfg.step0
        accepted = False
        for _ in range(cfg.max_halvings + 1):
            trial_int = project_box(U.intensities - s * grad, U.lower, U.upper)
            delta = trial_int - U.intensities
            predicted = control_inner_rms(grad, delta, U.dt)
            trial = U.with_intensities(trial_int)
            trial_cost, _ = _forward_cost(trial, coils, targets, cfg)
            if trial_cost.total <= cost.total + cfg.armijo_c1 * predicted:
                accepted = True
                break
            s *= 0.5
        if not accepted:
            raise StalledDescentError(
                f"stalled descent: no sufficient decrease after "
                f"{cfg.max_halvings} halvings at iteration {it}"
            )
        U = trial
        grad, cost, _, _ = _gradient_state(U, coils, targets, cfg)
        history[-1].step = s  # step that produced the next iterate

    return U, history
