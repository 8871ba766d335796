"""Rectangular cell-centered grids with homogeneous-Neumann discrete calculus.

The domain is a box in 1, 2 or 3 dimensions, sampled at cell centers.  The
Neumann condition is enforced by mirror ghost cells (the ghost value equals
the adjacent interior value), which makes the discrete Laplacian annihilate
constants exactly and keeps it self-adjoint and negative semi-definite under
the cell-sum inner product.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

NORM_KINDS = ("L2", "L4", "L6", "Linf", "H1", "H2equiv")


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centered box grid in 1, 2 or 3 dimensions."""

    cells: tuple[int, ...]
    lengths: tuple[float, ...]

    def __post_init__(self):
        cells = tuple(int(c) for c in self.cells)
        lengths = tuple(float(L) for L in self.lengths)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "lengths", lengths)
        if not 1 <= len(cells) <= 3:
            raise ValueError(f"grid dimension must be 1, 2 or 3, got {len(cells)}")
        if len(lengths) != len(cells):
            raise ValueError("cells and lengths must have one entry per axis")
        if any(c < 1 for c in cells):
            raise ValueError(f"cells per axis must be positive, got {cells}")
        if any(L <= 0 for L in lengths):
            raise ValueError(f"axis lengths must be positive, got {lengths}")

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / c for L, c in zip(self.lengths, self.cells))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells

    @property
    def node_count(self) -> int:
        return int(np.prod(self.cells))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def axis_coords(self, axis: int) -> np.ndarray:
        """Cell-center coordinates along one axis."""
        h = self.spacing[axis]
        return (np.arange(self.cells[axis]) + 0.5) * h

    def meshgrid(self) -> list[np.ndarray]:
        """Cell-center coordinate arrays, one per axis, each of shape ``grid.shape``."""
        axes = [self.axis_coords(ax) for ax in range(self.dim)]
        return list(np.meshgrid(*axes, indexing="ij"))


@dataclass
class VectorField:
    """An R^3-valued field sampled at the cell centers of a grid.

    ``values`` has shape ``grid.shape + (3,)`` with axis 0 = x.
    """

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        expected = self.grid.shape + (3,)
        if self.values.shape != expected:
            raise ValueError(
                f"field values have shape {self.values.shape}, expected {expected}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    @classmethod
    def constant(cls, grid: Grid, vec) -> "VectorField":
        vals = np.broadcast_to(np.asarray(vec, dtype=float), grid.shape + (3,))
        return cls(grid, vals.copy())

    @classmethod
    def zero(cls, grid: Grid) -> "VectorField":
        return cls(grid, np.zeros(grid.shape + (3,)))

    def copy(self) -> "VectorField":
        return VectorField(self.grid, self.values.copy())


@dataclass
class Trajectory:
    """Time-indexed stack of vector fields on a fixed grid and uniform step.

    ``values`` has shape ``(K + 1,) + grid.shape + (3,)``; frame 0 is t = 0.
    """

    grid: Grid
    dt: float
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.dt <= 0:
            raise ValueError("trajectory dt must be positive")
        expected_tail = self.grid.shape + (3,)
        if self.values.ndim != len(expected_tail) + 1 or self.values.shape[1:] != expected_tail:
            raise ValueError(
                f"trajectory values have shape {self.values.shape}, "
                f"expected (K+1,) + {expected_tail}"
            )

    @property
    def n_steps(self) -> int:
        return self.values.shape[0] - 1

    @property
    def final_time(self) -> float:
        return self.n_steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.values.shape[0]) * self.dt

    def frame(self, j: int) -> VectorField:
        return VectorField(self.grid, self.values[j])

    def frame_values(self, j: int) -> np.ndarray:
        return self.values[j]


# ---------------------------------------------------------------------------
# discrete calculus
# ---------------------------------------------------------------------------

def _pad_edge(vals: np.ndarray, axis: int) -> np.ndarray:
    pad = [(0, 0)] * vals.ndim
    pad[axis] = (1, 1)
    return np.pad(vals, pad, mode="edge")


def laplacian_values(grid: Grid, vals: np.ndarray) -> np.ndarray:
    """5/7-point Laplacian with mirror ghost cells, applied componentwise.

    Works on any array whose leading ``grid.dim`` axes are the spatial axes
    (trailing axes, e.g. the vector components, are carried along).
    """
    out = np.zeros_like(vals)
    for ax, h in enumerate(grid.spacing):
        padded = _pad_edge(vals, ax)
        lo = [slice(None)] * vals.ndim
        hi = [slice(None)] * vals.ndim
        lo[ax] = slice(0, -2)
        hi[ax] = slice(2, None)
        out += (padded[tuple(lo)] - 2.0 * vals + padded[tuple(hi)]) / h**2
    return out


def laplacian(f: VectorField) -> VectorField:
    """Discrete Neumann Laplacian of a vector field."""
    return VectorField(f.grid, laplacian_values(f.grid, f.values))


def gradient_values(grid: Grid, vals: np.ndarray) -> list[np.ndarray]:
    """Face differences per axis (forward difference / h along that axis).

    Returns one array per axis, shortened by one cell along that axis.  With
    the mirror-ghost convention the boundary faces carry zero normal
    difference, so only interior faces appear.  These are the differences for
    which summation by parts against ``laplacian_values`` is exact.
    """
    grads = []
    for ax, h in enumerate(grid.spacing):
        lo = [slice(None)] * vals.ndim
        hi = [slice(None)] * vals.ndim
        lo[ax] = slice(0, -1)
        hi[ax] = slice(1, None)
        grads.append((vals[tuple(hi)] - vals[tuple(lo)]) / h)
    return grads


def gradient(f: VectorField) -> list[np.ndarray]:
    return gradient_values(f.grid, f.values)


def grad_sq_integral(grid: Grid, vals: np.ndarray) -> float:
    """Cell-sum integral of |grad f|^2 over interior faces.

    Equals ``-inner(laplacian(f), f)`` exactly (discrete integration by
    parts with the reflecting boundary).
    """
    w = grid.cell_volume
    total = 0.0
    for g in gradient_values(grid, vals):
        total += w * float(np.sum(g * g))
    return total


def inner(f: VectorField, g: VectorField) -> float:
    """Cell-sum L2 inner product of two fields on the same grid."""
    if f.grid != g.grid:
        raise ValueError("inner product requires fields on the same grid")
    return inner_values(f.grid, f.values, g.values)


def inner_values(grid: Grid, a: np.ndarray, b: np.ndarray) -> float:
    return grid.cell_volume * float(np.sum(a * b))


def norm_values(grid: Grid, vals: np.ndarray, which: str = "L2") -> float:
    w = grid.cell_volume
    if which in ("L2", "L4", "L6"):
        p = int(which[1])
        mag_sq = np.sum(vals * vals, axis=-1)
        return float((w * np.sum(mag_sq ** (p / 2.0))) ** (1.0 / p))
    if which == "Linf":
        mag_sq = np.sum(vals * vals, axis=-1)
        return float(np.sqrt(mag_sq.max())) if mag_sq.size else 0.0
    if which == "H1":
        l2sq = w * float(np.sum(vals * vals))
        return float(np.sqrt(l2sq + grad_sq_integral(grid, vals)))
    if which == "H2equiv":
        # equivalent-norm form: ||f||_L2 + ||lap f||_L2
        lap = laplacian_values(grid, vals)
        return norm_values(grid, vals, "L2") + norm_values(grid, lap, "L2")
    raise ValueError(f"unknown norm kind {which!r}; expected one of {NORM_KINDS}")


def norm(f: VectorField, which: str = "L2") -> float:
    """Norm of a vector field: L2/L4/L6/Linf, H1, or the L2 + L2-of-Laplacian
    equivalent H2 norm."""
    return norm_values(f.grid, f.values, which)


_trapezoid = getattr(np, "trapezoid", None) or np.trapz


def time_integral(series, dt: float) -> float:
    """Trapezoidal time quadrature of a sampled scalar series."""
    series = np.asarray(series, dtype=float)
    if series.ndim != 1 or series.shape[0] < 2:
        raise ValueError("degenerate time grid: need at least 2 samples")
    return float(_trapezoid(series, dx=dt))


# ---------------------------------------------------------------------------
# cosine eigenbasis of (-lap + I)
# ---------------------------------------------------------------------------

def cosine_modes(grid: Grid, count: int):
    """First ``count`` discrete Neumann cosine modes and their eigenvalues.

    The modes are products of cos(k pi x / L) sampled at cell centers,
    normalized to unit discrete L2 norm.  They are exact eigenvectors of the
    mirror-ghost Laplacian; the returned eigenvalues are those of the
    discrete operator (-lap_h + I), sorted increasingly (ties broken by the
    per-axis mode indices, so the ordering is deterministic).

    Returns
    -------
    modes : ndarray, shape (count,) + grid.shape
        Scalar mode profiles.
    eigenvalues : ndarray, shape (count,)
    """
    if count < 1:
        raise ValueError("mode count must be >= 1")
    if count > grid.node_count:
        raise ValueError(
            f"over-resolved basis: {count} modes requested on a grid "
            f"with {grid.node_count} nodes"
        )
    ranked = []
    for kidx in itertools.product(*(range(c) for c in grid.cells)):
        rho = 1.0
        for ax, k in enumerate(kidx):
            h = grid.spacing[ax]
            L = grid.lengths[ax]
            rho += -2.0 * (np.cos(k * np.pi * h / L) - 1.0) / h**2
        ranked.append((rho, kidx))
    ranked.sort(key=lambda item: (item[0], item[1]))
    ranked = ranked[:count]

    modes = np.empty((count,) + grid.shape)
    eigenvalues = np.empty(count)
    for j, (rho, kidx) in enumerate(ranked):
        profile = np.ones(grid.shape)
        for ax, k in enumerate(kidx):
            L = grid.lengths[ax]
            x = grid.axis_coords(ax)
            if k == 0:
                axis_fn = np.full_like(x, 1.0 / np.sqrt(L))
            else:
                axis_fn = np.sqrt(2.0 / L) * np.cos(k * np.pi * x / L)
            shape = [1] * grid.dim
            shape[ax] = -1
            profile = profile * axis_fn.reshape(shape)
        modes[j] = profile
        eigenvalues[j] = rho
    return modes, eigenvalues


# ---------------------------------------------------------------------------
# LLBFIELD snapshot format
# ---------------------------------------------------------------------------

_MAGIC = "LLBFIELD v1"


def write_field(path, f: VectorField) -> None:
    """Write a field snapshot: ASCII header, then little-endian float64
    triples per node in x-fastest order."""
    grid = f.grid
    header = " ".join([_MAGIC, str(grid.dim)] + [str(c) for c in grid.cells])
    # x-fastest: reverse the spatial axes so that ravel runs x innermost
    spatial = tuple(range(grid.dim))
    flat = np.transpose(f.values, spatial[::-1] + (grid.dim,)).reshape(-1, 3)
    with open(path, "wb") as fh:
        fh.write((header + "\n").encode("ascii"))
        fh.write(flat.astype("<f8").tobytes())


def read_field(path, grid: Grid) -> VectorField:
    """Read a field snapshot written by :func:`write_field` onto ``grid``."""
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").strip()
        payload = fh.read()
    parts = header.split()
    if parts[:2] != _MAGIC.split():
        raise ValueError(f"not an LLBFIELD v1 file: header {header!r}")
    dim = int(parts[2])
    cells = tuple(int(p) for p in parts[3:3 + dim])
    if dim != grid.dim or cells != grid.cells:
        raise ValueError(
            f"snapshot grid {cells} (dim {dim}) does not match target grid "
            f"{grid.cells} (dim {grid.dim})"
        )
    flat = np.frombuffer(payload, dtype="<f8")
    if flat.size != grid.node_count * 3:
        raise ValueError(
            f"snapshot payload has {flat.size} floats, expected {grid.node_count * 3}"
        )
    rev_shape = grid.cells[::-1] + (3,)
    vals = flat.reshape(rev_shape)
    spatial = tuple(range(grid.dim))
    vals = np.transpose(vals, spatial[::-1] + (grid.dim,))
    return VectorField(grid, vals.copy())
