"""Command line front end: solve / derive / validate / sweep.

Every command reads one TOML config, writes CSV (and VTK) artifacts into the
output directory, and exits with 0 on success, 1 when a validation check
fails its threshold, 2 on configuration errors, 3 on unsupported option
combinations, and 4 on numerical failures.  Errors print one line on stderr
of the form ``[CODE] message``.

Only the standard library is imported at module level so that ``--threads``
can pin the BLAS thread pools before numpy is first loaded.
"""

import argparse
import os
import sys

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_UNSUPPORTED = 3
EXIT_NUMERICAL = 4

_CODE_TO_EXIT = {
    "CONFIG_ERROR": EXIT_CONFIG,
    "UNSUPPORTED_COMBINATION": EXIT_UNSUPPORTED,
    "WRONG_PAIR": EXIT_UNSUPPORTED,
    "NONNORMAL_V": EXIT_UNSUPPORTED,
    "CONJUGATE_UNAVAILABLE": EXIT_UNSUPPORTED,
}


def _set_threads(n):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(n)


def build_parser():
    ap = argparse.ArgumentParser(
        prog="shapehess",
        description="Shape functionals of convex energies: state solves, "
                    "first/second shape derivatives, and validation sweeps.",
    )
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("solve", "solve the state problem; write state.csv, fields.vtk, summary.csv"),
        ("derive", "evaluate derivative routes; write derivatives.csv"),
        ("validate", "run fd sweep and residual checks; write fd_sweep.csv, invariants.csv"),
        ("sweep", "repeat derive under mesh refinement; write convergence.csv"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the TOML run config")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--threads", type=int, default=1,
                       help="BLAS/OpenMP thread count (default 1)")
        p.add_argument("--seed", type=int, default=0,
                       help="seed for randomized property checks")
    return ap


def _prepare(args):
    """Load config, build the problem objects, create the output directory."""
    import numpy as np

    from .config import build_field, build_mesh, build_pair, load_config

    np.random.seed(args.seed)
    cfg = load_config(args.config)
    out_dir = args.out if args.out is not None else cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    mesh = build_mesh(cfg.geometry)
    pair = build_pair(cfg.integrand)
    V = build_field(cfg.deformation)
    return cfg, out_dir, mesh, pair, V


def _check_special_scope(cfg, mesh, pair):
    """The p-power boundary route is Dirichlet-only; fail fast when requested."""
    from .errors import UnsupportedCombination
    from .mesh import NEUMANN

    if "special" not in cfg.routes:
        return
    if pair.p_exponent is None or pair.is_torsion:
        return
    if (mesh.boundary_tags == NEUMANN).any():
        raise UnsupportedCombination(
            "the p-power second-derivative route requires a pure Dirichlet "
            "boundary; drop 'special' from run.routes or set "
            "geometry.dirichlet_fraction = 1.0"
        )


def cmd_solve(args) -> int:
    from .export import write_state, write_summary, write_vtk
    from .solver import optimality_diagnostics, solve_state

    cfg, out_dir, mesh, pair, V = _prepare(args)
    state = solve_state(mesh, pair)
    opt = optimality_diagnostics(state)
    write_summary(os.path.join(out_dir, "summary.csv"), state, opt)
    write_state(os.path.join(out_dir, "state.csv"), state)
    write_vtk(os.path.join(out_dir, "fields.vtk"), state, V=V)
    return EXIT_OK


def cmd_derive(args) -> int:
    from .export import write_derivatives
    from .validation import ReportOptions, full_report

    cfg, out_dir, mesh, pair, V = _prepare(args)
    _check_special_scope(cfg, mesh, pair)
    opt = ReportOptions(
        with_fd=cfg.with_fd,
        eps_list=cfg.eps_list,
        with_special="special" in cfg.routes,
        rho_rel=cfg.rho_rel,
    )
    report = full_report(mesh, pair, V, opt)
    write_derivatives(os.path.join(out_dir, "derivatives.csv"), report,
                      routes=cfg.routes)
    return EXIT_OK


def _rel(a, b, floor=0.0):
    """Relative gap |a-b|/max(|a|,|b|); values below the floor count as equal."""
    den = max(abs(a), abs(b))
    if den <= floor or den == 0.0:
        return 0.0
    return abs(a - b) / den


def cmd_validate(args) -> int:
    import numpy as np

    from .errors import SupportViolation
    from .export import write_fd_sweep, write_invariants
    from .solver import optimality_diagnostics, solve_state
    from .validation import (
        ReportOptions,
        fd_sweep,
        full_report,
        gamma_limit_check,
    )

    cfg, out_dir, mesh, pair, V = _prepare(args)
    _check_special_scope(cfg, mesh, pair)
    state = solve_state(mesh, pair)
    opt_rep = optimality_diagnostics(state)
    report = full_report(
        mesh, pair, V,
        ReportOptions(with_special="special" in cfg.routes, rho_rel=cfg.rho_rel),
        state=state,
    )
    sweep = fd_sweep(mesh, pair, V, state=state, eps_list=cfg.eps_list)
    write_fd_sweep(os.path.join(out_dir, "fd_sweep.csv"), sweep)

    # derivative magnitudes below this floor count as zero in relative checks:
    # for null-direction fields both routes return discretization noise and
    # their ratio is meaningless
    from .fem import dofmap

    pts = dofmap(mesh).dof_points
    vv = V.value(pts)
    vmax = float(np.max(np.hypot(vv[:, 0], vv[:, 1]), initial=0.0))
    dvmax = float(np.max(np.sqrt(np.sum(V.jacobian(pts) ** 2, axis=(1, 2))),
                         initial=0.0))
    floor = 1e-3 * (vmax + dvmax) ** 2 * abs(report.J_value)

    j_scale = max(abs(report.J_value), 1e-300)
    rows = [
        ("el_residual", opt_rep.el_residual, 1e-8),
        ("divA_residual", report.divA_residual, 1e-2),
        ("divB_residual", report.divB_residual, 1e-2),
        ("neumann_flux", opt_rep.neumann_flux, 1e-2),
        ("j1_route_disagreement_rel",
         _rel(report.J1_volume, report.J1_boundary, floor), 1e-2),
        ("j2_route_disagreement_rel",
         _rel(report.J2_volume, report.J2_boundary, floor), 2e-2),
        ("fd_first_rel", _rel(sweep.j1_fd, report.J1_volume, floor), 1e-2),
        ("fd_second_rel", _rel(sweep.j2_fd, report.J2_volume, floor), 1e-2),
    ]
    if opt_rep.duality_gap is not None:
        rows.append(("duality_gap_rel", opt_rep.duality_gap / j_scale, 1e-3))

    try:
        dist = np.asarray(gamma_limit_check(state, V, eps_list=cfg.eps_list))
        eps = np.asarray(cfg.eps_list, dtype=float)
        if len(dist) >= 2:
            slope = float(np.polyfit(np.log(eps), np.log(np.maximum(dist, 1e-300)), 1)[0])
            rows.append(("gamma_slope", slope, None))
            rows.append(("gamma_slope_at_least_0.9", slope, -0.9))
        for e, dv in zip(eps, dist):
            rows.append((f"gamma_distance_eps_{e:g}", dv, None))
    except SupportViolation:
        pass  # gamma quotients only make sense for compactly supported fields

    inv_rows = []
    any_fail = False
    for name, value, threshold in rows:
        if threshold is None:
            inv_rows.append((name, value, None, True))
            continue
        # negative threshold encodes a lower bound of -threshold
        ok = value >= -threshold if threshold < 0 else value <= threshold
        any_fail = any_fail or not ok
        inv_rows.append((name, value, threshold, ok))
    write_invariants(os.path.join(out_dir, "invariants.csv"), inv_rows)
    return EXIT_CHECK_FAILED if any_fail else EXIT_OK


def cmd_sweep(args) -> int:
    from dataclasses import replace

    from .config import build_mesh
    from .errors import UnsupportedCombination
    from .export import write_convergence
    from .validation import ReportOptions, full_report

    cfg, out_dir, mesh, pair, V = _prepare(args)
    _check_special_scope(cfg, mesh, pair)
    if cfg.geometry.kind == "mesh_file" and cfg.levels > 1:
        raise UnsupportedCombination(
            "mesh refinement sweeps need a generated geometry, not a mesh file"
        )

    h_list = []
    reports = []
    for level in range(cfg.levels):
        g = cfg.geometry
        if level > 0:
            g = replace(g, h=g.h / 2.0 ** level)
            mesh = build_mesh(g)
        reports.append(full_report(
            mesh, pair, V,
            ReportOptions(with_special="special" in cfg.routes, rho_rel=cfg.rho_rel),
        ))
        h_list.append(mesh.mesh_size)

    table = {
        "J_value": ([r.J_value for r in reports], False),
        "J1_volume": ([r.J1_volume for r in reports], False),
        "J2_volume": ([r.J2_volume for r in reports], False),
        "j1_route_disagreement": (
            [abs(r.J1_volume - r.J1_boundary) for r in reports], True),
        "j2_route_disagreement": ([r.route_disagreement for r in reports], True),
        "divA_residual": ([r.divA_residual for r in reports], True),
        "divB_residual": ([r.divB_residual for r in reports], True),
    }
    write_convergence(os.path.join(out_dir, "convergence.csv"),
                      cfg.levels, h_list, table)
    return EXIT_OK


_COMMANDS = {
    "solve": cmd_solve,
    "derive": cmd_derive,
    "validate": cmd_validate,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("[CONFIG_ERROR] --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    _set_threads(args.threads)

    from .errors import ShapehessError

    try:
        return _COMMANDS[args.command](args)
    except ShapehessError as exc:
        line = str(exc).replace("\n", " ")
        print(line, file=sys.stderr)
        return _CODE_TO_EXIT.get(exc.code, EXIT_NUMERICAL)
    except OSError as exc:
        print(f"[IO_ERROR] {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
