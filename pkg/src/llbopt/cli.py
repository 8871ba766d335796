"""Command-line entry point: experiment orchestration and output management.

Subcommands: simulate, optimize, certify, check-grad, check-taylor,
check-curvature, convergence, oracle.  Every run writes a manifest
(config hash, package/library versions, seed) into its output directory;
identical config + seed produces bit-identical CSV outputs.

Exit codes: 0 success, 2 config validation failure, 3 solver blow-up,
4 verification check beyond tolerance.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np
import scipy

from . import __version__
from .certify import (
    critical_cone_mask,
    curvature,
    global_and_uniqueness_report,
    second_order_scan,
)
from .coils import ControlPath, control_inner_rms
from .config import ConfigError, RunConfig, parse_config, read_control_csv
from .grid import Grid, laplacian_values, write_field
from .llb import BlowUpError, ImplicitSolveError, StalledDescentError, energy_ledger, simulate, simulate_galerkin
from .optimize import projected_gradient_descent, _forward_cost, _gradient_state
from .tangent import LinearizationPoint, taylor_remainder_order

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BLOWUP = 3
EXIT_CHECK = 4


class CheckFailure(RuntimeError):
    """A verification battery exceeded its tolerance."""


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if not isinstance(v, str) else v for v in row) + "\n")


def write_manifest(out_dir, subcommand, config_path, seed):
    with open(config_path, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()
    manifest = {
        "subcommand": subcommand,
        "config": os.path.abspath(config_path),
        "config_sha256": digest,
        "seed": int(seed),
        "versions": {
            "llbopt": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": sys.version.split()[0],
        },
        "llb_threads": os.environ.get("LLB_THREADS"),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def smooth_directions(n_steps, n_coils, dt, rng):
    """Deterministic smooth-in-time test directions (one column per coil)."""
    t = np.arange(n_steps + 1) * dt
    T = max(n_steps * dt, dt)
    cols = []
    for _ in range(max(n_coils, 1)):
        c = rng.standard_normal(3)
        cols.append(c[0] + c[1] * np.sin(2 * np.pi * t / T) + c[2] * np.cos(np.pi * t / T))
    out = np.stack(cols, axis=1)
    return out[:, :n_coils] if n_coils else np.zeros((n_steps + 1, 0))


def _setup(cfg: RunConfig):
    grid = cfg.build_grid()
    sim = cfg.build_sim()
    coils = cfg.build_coils(grid)
    m0 = cfg.build_initial(grid)
    U = cfg.build_control(sim.n_steps, coils.n_coils)
    targets = cfg.build_targets(grid, coils, sim)
    opt = cfg.build_optimize(grid)
    return grid, sim, coils, m0, U, targets, opt


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, out_dir, quiet):
    grid, sim, coils, m0, U, _, _ = _setup(cfg)
    traj = simulate(m0, U, coils, sim)
    ledger = energy_ledger(traj, U, coils)
    rows = zip(ledger["t"], ledger["l2_sq"], ledger["grad_sq"],
               ledger["l4_quart"], ledger["u_sq"], ledger["defect"])
    write_csv(os.path.join(out_dir, "diagnostics.csv"),
              ["t", "l2_sq", "grad_sq", "l4_quart", "u_sq", "defect"], rows)
    every = sim.diagnostics_every
    if every > 0:
        for j in range(0, traj.n_steps + 1, every):
            write_field(os.path.join(out_dir, f"state_{j:06d}.llbfield"), traj.frame(j))
    write_field(os.path.join(out_dir, "state_final.llbfield"), traj.frame(traj.n_steps))
    if not quiet:
        print(f"simulate: {traj.n_steps} steps, final |m|_L2^2 = "
              f"{ledger['l2_sq'][-1]:.6g}, max defect = {ledger['defect'].max():.3g}")
    return EXIT_OK


def cmd_optimize(cfg: RunConfig, out_dir, quiet):
    grid, sim, coils, m0, U0, targets, opt = _setup(cfg)
    U, history = projected_gradient_descent(U0, coils, targets, opt)
    write_csv(os.path.join(out_dir, "history.csv"),
              ["iter", "cost", "tracking", "terminal", "control", "residual", "step"],
              [(h.iteration, h.cost, h.tracking, h.terminal, h.control,
                h.residual, h.step) for h in history])
    n = coils.n_coils
    header = (["t"] + [f"U_{i+1}" for i in range(n)]
              + [f"a_{i+1}" for i in range(n)] + [f"b_{i+1}" for i in range(n)])
    rows = [[t] + list(U.intensities[j]) + list(U.lower[j]) + list(U.upper[j])
            for j, t in enumerate(U.times)]
    write_csv(os.path.join(out_dir, "control.csv"), header, rows)
    traj = simulate(m0, U, coils, sim)
    write_field(os.path.join(out_dir, "state_final.llbfield"), traj.frame(traj.n_steps))
    final = history[-1]
    if not quiet:
        print(f"optimize: {final.iteration} iterations, cost {final.cost:.8g}, "
              f"residual {final.residual:.3e}")
    return EXIT_OK


def cmd_certify(cfg: RunConfig, out_dir, quiet, control_csv=None):
    missing = [key for key in ("certify.c_go", "certify.c4n")
               if cfg.get(key) is None]
    if missing:
        raise ConfigError([f"{key}: required for the certify subcommand"
                           for key in missing])
    grid, sim, coils, m0, U, targets, opt = _setup(cfg)
    if control_csv is not None:
        intens, lower, upper = read_control_csv(control_csv, sim.n_steps, coils.n_coils)
        U = ControlPath(intens,
                        lower if lower is not None else U.lower,
                        upper if upper is not None else U.upper, sim.dt)
    rng = np.random.default_rng(cfg.seed)
    n_dirs = cfg["certify.n_dirs"]
    try:
        min_rayleigh, samples, _ = second_order_scan(
            U, coils, targets, n_dirs, opt, rng=rng, eps_fd=cfg["certify.eps_fd"])
    except ValueError:
        # sampled cone degenerated to {0}; the first-order report still stands
        min_rayleigh, samples = None, []
    report = global_and_uniqueness_report(
        U, coils, targets, opt, cfg.build_constants(),
        rng=np.random.default_rng(cfg.seed + 1),
        n_fooc_samples=cfg["certify.n_fooc_samples"],
        curvature_samples=samples, min_rayleigh=min_rayleigh)

    lines = {
        "pf_residual": report.pf_residual,
        "fooc_min_sample": report.fooc_min_sample,
        "min_rayleigh": report.min_rayleigh,
        "go_lhs": report.go_lhs,
        "go_status": report.go_status,
        "go_status_strict": report.go_status_strict,
        "uloc_lhs": report.uloc_lhs,
        "uloc_rhs": report.uloc_rhs,
        "uloc_status": report.uloc_status,
        "smallness_max": report.smallness_max,
        "smallness_status": report.smallness_status,
    }
    for k, v in report.factors.items():
        lines[f"factor.{k}"] = v
    for k, v in report.constants_used.items():
        lines[f"constant.{k}"] = v
    with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as fh:
        for k, v in lines.items():
            if v is None:
                v = "unset"
            fh.write(f"{k}={v if isinstance(v, str) else _fmt(v)}\n")

    n = coils.n_coils
    write_csv(os.path.join(out_dir, "upsilon.csv"),
              ["t"] + [f"upsilon_{i+1}" for i in range(n)],
              [[t] + list(report.upsilon[j]) for j, t in enumerate(U.times)])
    masks = critical_cone_mask(U, report.upsilon,
                               tol_active=cfg.get("certify.tol_active"),
                               tol_upsilon=cfg.get("certify.tol_upsilon"))
    labels = np.where(masks.zero, "zero",
                      np.where(masks.nonneg, "nonneg",
                               np.where(masks.nonpos, "nonpos", "free")))
    write_csv(os.path.join(out_dir, "masks.csv"),
              ["t"] + [f"mask_{i+1}" for i in range(n)],
              [[t] + list(labels[j]) for j, t in enumerate(U.times)])
    write_csv(os.path.join(out_dir, "curvature.csv"),
              ["direction", "q_adj", "q_fd", "rel_err", "fd_valid"],
              [(s.direction_id, s.q_adj, s.q_fd, s.rel_err, s.fd_valid)
               for s in samples])
    if not quiet:
        ray = "n/a" if min_rayleigh is None else f"{min_rayleigh:.6g}"
        print(f"certify: pf_residual {report.pf_residual:.3e}, "
              f"min rayleigh {ray}, GO {report.go_status}, "
              f"ULOC {report.uloc_status}")
    return EXIT_OK


def cmd_check_grad(cfg: RunConfig, out_dir, quiet):
    grid, sim, coils, m0, U, targets, opt = _setup(cfg)
    rng = np.random.default_rng(cfg.seed)
    h = smooth_directions(sim.n_steps, coils.n_coils, sim.dt, rng)
    grad, cost0, _, _ = _gradient_state(U, coils, targets, opt)
    eps = cfg["checks.grad_eps"]
    wide = np.full_like(U.intensities, np.inf)
    cp, _ = _forward_cost(ControlPath(U.intensities + eps * h, -wide, wide, sim.dt),
                          coils, targets, opt)
    cm, _ = _forward_cost(ControlPath(U.intensities - eps * h, -wide, wide, sim.dt),
                          coils, targets, opt)
    fd = (cp.total - cm.total) / (2 * eps)
    ad = control_inner_rms(grad, h, sim.dt)
    rel = abs(fd - ad) / max(abs(fd), 1e-300)
    write_csv(os.path.join(out_dir, "checkgrad.csv"),
              ["eps", "fd_slope", "adjoint_slope", "rel_err"],
              [(eps, fd, ad, rel)])
    tol = cfg["checks.grad_tol"]
    if not quiet:
        print(f"check-grad: rel err {rel:.3e} (tol {tol:g})")
    if not np.isfinite(rel) or rel > tol:
        raise CheckFailure(f"gradient check failed: rel err {rel:.3e} > {tol:g}")
    return EXIT_OK


def cmd_check_taylor(cfg: RunConfig, out_dir, quiet):
    grid, sim, coils, m0, U, targets, opt = _setup(cfg)
    traj = simulate(m0, U, coils, sim)
    point = LinearizationPoint(traj, U, coils)
    rng = np.random.default_rng(cfg.seed)
    dU = smooth_directions(sim.n_steps, coils.n_coils, sim.dt, rng)
    result = taylor_remainder_order(point, dU, cfg["checks.taylor_eps"], cfg=sim)
    write_csv(os.path.join(out_dir, "taylor.csv"),
              ["eps", "remainder", "first_difference"],
              zip(result.epsilons, result.remainders, result.first_differences))
    min_slope = cfg["checks.taylor_min_slope"]
    if not quiet:
        print(f"check-taylor: remainder order {result.remainder_order:.3f}, "
              f"first-difference order {result.first_difference_order:.3f}")
    if not result.remainder_order >= min_slope:
        raise CheckFailure(
            f"Taylor check failed: remainder order {result.remainder_order:.3f} "
            f"< {min_slope:g}")
    return EXIT_OK


def cmd_check_curvature(cfg: RunConfig, out_dir, quiet):
    grid, sim, coils, m0, U, targets, opt = _setup(cfg)
    rng = np.random.default_rng(cfg.seed)
    n_dirs = cfg["certify.n_dirs"]
    samples = []
    for d in range(n_dirs):
        h = smooth_directions(sim.n_steps, coils.n_coils, sim.dt, rng)
        s = curvature(U, coils, targets, h, opt, eps_fd=cfg["certify.eps_fd"])
        s.direction_id = d
        samples.append(s)
    write_csv(os.path.join(out_dir, "curvature.csv"),
              ["direction", "q_adj", "q_fd", "rel_err", "fd_valid"],
              [(s.direction_id, s.q_adj, s.q_fd, s.rel_err, s.fd_valid)
               for s in samples])
    tol = cfg["checks.curvature_tol"]
    worst = max((s.rel_err for s in samples if s.fd_valid), default=float("nan"))
    if not quiet:
        print(f"check-curvature: worst rel err {worst:.3e} over {n_dirs} directions")
    if not np.isfinite(worst) or worst > tol:
        raise CheckFailure(f"curvature check failed: worst rel err {worst:.3e} > {tol:g}")
    return EXIT_OK


def temporal_self_convergence(cfg: RunConfig, n_levels: int = 4):
    """Self-convergence of the forward solver under dt halving.

    Returns (dts, errors, order): error_k compares the final frame at dt_k
    against dt_k / 2.
    """
    grid, sim0, coils, m0, U0, _, _ = _setup(cfg)
    dts = [sim0.dt / 2**k for k in range(n_levels + 1)]
    finals = []
    from .llb import SimConfig as SC
    for dt in dts:
        sim = SC(T=sim0.T, dt=dt, cg_tol=sim0.cg_tol, cg_max_iter=sim0.cg_max_iter,
                 blowup_threshold=sim0.blowup_threshold,
                 warn_dt_factor=sim0.warn_dt_factor)
        steps = sim.n_steps
        stride = round(sim0.dt / dt)
        intens = np.repeat(U0.intensities, stride, axis=0)[:steps + 1]
        intens[-1] = U0.intensities[-1]
        U = ControlPath(intens, -np.inf, np.inf, dt)
        finals.append(simulate(m0, U, coils, sim).values[-1])
    w = grid.cell_volume
    errors = [float(np.sqrt(w * np.sum((finals[k] - finals[k + 1]) ** 2)))
              for k in range(n_levels)]
    order = float(np.polyfit(np.log(dts[:n_levels]), np.log(errors), 1)[0])
    return dts[:n_levels], errors, order


def spatial_laplacian_order(lengths=(1.0,), resolutions=(16, 32, 64, 128, 256)):
    """Observed order of the Laplacian eigenvalue of cos(pi x / L)."""
    L = lengths[0]
    target = -(np.pi / L) ** 2
    hs, errs = [], []
    for n in resolutions:
        g = Grid((n,), (L,))
        x = g.axis_coords(0)
        f = np.zeros(g.shape + (3,))
        f[..., 0] = np.cos(np.pi * x / L)
        lap = laplacian_values(g, f)
        lam = float(np.sum(lap * f) / np.sum(f * f))
        hs.append(g.spacing[0])
        errs.append(abs(lam - target))
    order = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])
    return hs, errs, order


def cmd_convergence(cfg: RunConfig, out_dir, quiet):
    dts, terrs, t_order = temporal_self_convergence(cfg)
    hs, serrs, s_order = spatial_laplacian_order(tuple(cfg["grid.lengths"]))
    rows = [("temporal", dt, err) for dt, err in zip(dts, terrs)]
    rows += [("spatial", h, err) for h, err in zip(hs, serrs)]
    write_csv(os.path.join(out_dir, "convergence.csv"),
              ["study", "resolution", "error"], rows)
    write_csv(os.path.join(out_dir, "orders.csv"),
              ["study", "observed_order"],
              [("temporal", t_order), ("spatial", s_order)])
    t_lo, t_hi = cfg["checks.temporal_order_range"]
    s_lo, s_hi = cfg["checks.spatial_order_range"]
    if not quiet:
        print(f"convergence: temporal order {t_order:.3f} (want [{t_lo}, {t_hi}]), "
              f"spatial order {s_order:.3f} (want [{s_lo}, {s_hi}])")
    if not (t_lo <= t_order <= t_hi):
        raise CheckFailure(f"temporal order {t_order:.3f} outside [{t_lo}, {t_hi}]")
    if not (s_lo <= s_order <= s_hi):
        raise CheckFailure(f"spatial order {s_order:.3f} outside [{s_lo}, {s_hi}]")
    return EXIT_OK


def cmd_oracle(cfg: RunConfig, out_dir, quiet):
    grid, sim, coils, m0, U, _, _ = _setup(cfg)
    traj = simulate(m0, U, coils, sim)
    oracle = simulate_galerkin(m0, U, coils, sim, cfg["checks.oracle_modes"])
    w = grid.cell_volume
    disc = np.array([np.sqrt(w * np.sum((traj.values[j] - oracle.values[j]) ** 2))
                     for j in range(traj.n_steps + 1)])
    write_csv(os.path.join(out_dir, "oracle.csv"), ["t", "l2_discrepancy"],
              zip(traj.times, disc))
    tol = cfg["checks.oracle_tol"]
    worst = float(disc.max())
    if not quiet:
        print(f"oracle: max L2 discrepancy {worst:.3e} (tol {tol:g})")
    if worst > tol:
        raise CheckFailure(f"Galerkin oracle disagreement {worst:.3e} > {tol:g}")
    return EXIT_OK


_COMMANDS = {
    "simulate": cmd_simulate,
    "optimize": cmd_optimize,
    "certify": cmd_certify,
    "check-grad": cmd_check_grad,
    "check-taylor": cmd_check_taylor,
    "check-curvature": cmd_check_curvature,
    "convergence": cmd_convergence,
    "oracle": cmd_oracle,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="llbopt",
        description="LLB optimal-control solver and certification toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--quiet", action="store_true")
        if name == "certify":
            p.add_argument("--control", default=None,
                           help="control CSV (defaults to the config control block)")
    args = parser.parse_args(argv)

    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            cfg.raw["seed"] = args.seed
        os.makedirs(args.out, exist_ok=True)
        write_manifest(args.out, args.command, args.config, cfg.seed)
        if args.command == "certify":
            return _COMMANDS[args.command](cfg, args.out, args.quiet,
                                           control_csv=args.control)
        return _COMMANDS[args.command](cfg, args.out, args.quiet)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BlowUpError, ImplicitSolveError, StalledDescentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except CheckFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
