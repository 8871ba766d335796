import numpy as np
import pytest

from llbopt import (
    CoilSet,
    ControlPath,
    Grid,
    SimConfig,
    VectorField,
    gaussian_coil,
    simulate,
)
from llbopt.optimize import OptimizeConfig, TrackingTargets


def unit_grid_1d(n=32, length=1.0):
    return Grid((n,), (length,))


def cosine_initial(grid, amp=0.4):
    """Smooth Neumann-compatible initial state used across tests."""
    coords = grid.meshgrid()
    vals = np.zeros(grid.shape + (3,))
    vals[..., 0] = amp * np.cos(np.pi * coords[0])
    vals[..., 1] = 0.5 * amp
    return VectorField(grid, vals)


def two_gaussian_coils(grid):
    if grid.dim == 1:
        c1, c2 = [0.3], [0.7]
    else:
        c1 = [0.3] + [0.5] * (grid.dim - 1)
        c2 = [0.7] + [0.5] * (grid.dim - 1)
    return CoilSet.from_fields([gaussian_coil(grid, c1, 0.15, 0),
                                gaussian_coil(grid, c2, 0.15, 1)])


def smooth_time_profiles(n_steps, dt, coeffs):
    """Deterministic smooth control samples, one column per coefficient row."""
    t = np.arange(n_steps + 1) * dt
    T = max(n_steps * dt, dt)
    cols = [c0 + c1 * np.sin(2 * np.pi * t / T) + c2 * np.cos(np.pi * t / T)
            for (c0, c1, c2) in coeffs]
    return np.stack(cols, axis=1)


def tracking_problem(n=32, dt=5e-3, T=0.5, amp=0.4, lower=-5.0, upper=5.0,
                     tol=1e-6, dim=1):
    """The stock tracking problem: reachable-adjacent target from an
    uncontrolled run, two Gaussian coils, box bounds."""
    if dim == 1:
        grid = Grid((n,), (1.0,))
    else:
        grid = Grid((n,) * dim, (1.0,) * dim)
    sim = SimConfig(T=T, dt=dt)
    K = sim.n_steps
    coils = two_gaussian_coils(grid)
    m0 = cosine_initial(grid, amp)
    m0_target = VectorField(grid, 0.55 * m0.values + 0.12)
    target_traj = simulate(m0_target, ControlPath.zeros(K, coils.n_coils, dt),
                           coils, sim)
    targets = TrackingTargets.from_trajectory(target_traj)
    U0 = ControlPath.zeros(K, coils.n_coils, dt, lower=lower, upper=upper)
    cfg = OptimizeConfig(m0=m0, sim=sim, tol=tol)
    return grid, sim, coils, m0, U0, targets, cfg


@pytest.fixture(scope="session")
def stock_problem():
    return tracking_problem()
