"""CSV and VTK artifact writers.

All numbers are written with 17 significant digits so that runs with
identical inputs produce byte-identical files and distinct doubles never
collide.  VTK output is legacy ASCII with each quadratic triangle split
into its four congruent linear sub-triangles, which renders the P2 field
faithfully at the dof points without requiring quadratic cell support.
"""

import csv

import numpy as np

from .fem import boundary_quad, dofmap
from .shape_calculus import DerivativeReport, FULL_PART, field_C
from .solver import OptimalityReport, StateSolution
from .validation import FdSweep


def fmt(x) -> str:
    """Decimal text for one value: floats at 17 significant digits."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if x == 0.0:
        x = 0.0  # never print the sign of a negative zero
    return "%.17g" % x


def _open_csv(path):
    return open(path, "w", encoding="utf-8", newline="")


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def write_summary(path, state: StateSolution, opt: OptimalityReport):
    """summary.csv: the functional value and the optimality certificates."""
    rep = state.newton_report
    with _open_csv(path) as fh:
        w = _writer(fh)
        w.writerow([
            "J_value", "el_residual", "duality_gap", "dual_feasibility",
            "neumann_flux", "max_grad", "newton_iterations", "newton_residual",
            "n_dofs", "h",
        ])
        w.writerow([
            fmt(state.J_value), fmt(opt.el_residual), fmt(opt.duality_gap),
            fmt(opt.dual_feasibility), fmt(opt.neumann_flux), fmt(opt.max_grad),
            fmt(rep.iterations), fmt(rep.residual),
            fmt(dofmap(state.mesh).n_dofs), fmt(state.mesh.mesh_size),
        ])


def write_state(path, state: StateSolution):
    """state.csv: one row per dof with position, solution, and stress."""
    dm = dofmap(state.mesh)
    pts = dm.dof_points
    diri = np.zeros(dm.n_dofs, dtype=bool)
    diri[dm.dirichlet_dofs] = True
    u = state.u.values
    g = state.grad_u.values
    s = state.sigma.values
    with _open_csv(path) as fh:
        w = _writer(fh)
        w.writerow(["dof", "x", "y", "dirichlet", "u",
                    "grad_u_x", "grad_u_y", "sigma_x", "sigma_y"])
        for i in range(dm.n_dofs):
            w.writerow([
                fmt(i), fmt(pts[i, 0]), fmt(pts[i, 1]), fmt(diri[i]), fmt(u[i]),
                fmt(g[i, 0]), fmt(g[i, 1]), fmt(s[i, 0]), fmt(s[i, 1]),
            ])


def derivative_rows(report: DerivativeReport, routes=("volume", "boundary", "special")):
    """Rows for derivatives.csv: (route, order, value, residual, h, notes)."""
    h = report.h
    note = "; ".join(report.notes)
    rows = [("J_value", 0, report.J_value, None, h, note)]
    if "volume" in routes:
        rows.append(("J1_volume", 1, report.J1_volume, report.divA_residual, h, ""))
    if "boundary" in routes:
        res = abs(report.J1_volume - report.J1_boundary)
        rows.append(("J1_boundary", 1, report.J1_boundary, res, h, ""))
    if "volume" in routes:
        rows.append(("J2_volume", 2, report.J2_volume, report.divB_residual, h, ""))
    if "boundary" in routes:
        rows.append(("J2_boundary", 2, report.J2_boundary,
                     report.route_disagreement, h, ""))
    if "special" in routes and report.J2_special is not None:
        res = abs(report.J2_special - report.J2_volume)
        rows.append(("J2_special", 2, report.J2_special, res, h, ""))
    if report.fd_first is not None:
        eps_note = "eps_list=" + "/".join(fmt(e) for e in report.eps_list)
        rows.append(("fd_first", 1, report.fd_first,
                     abs(report.fd_first - report.J1_volume), h, eps_note))
        rows.append(("fd_second", 2, report.fd_second,
                     abs(report.fd_second - report.J2_volume), h, eps_note))
    return rows


def write_derivatives(path, report: DerivativeReport,
                      routes=("volume", "boundary", "special")):
    with _open_csv(path) as fh:
        w = _writer(fh)
        w.writerow(["route", "order", "value", "residual", "h", "notes"])
        for route, order, value, residual, h, notes in derivative_rows(report, routes):
            w.writerow([route, fmt(order), fmt(value), fmt(residual), fmt(h), notes])


def write_fd_sweep(path, sweep: FdSweep):
    """fd_sweep.csv: one row per step size plus the extrapolated estimates."""
    with _open_csv(path) as fh:
        w = _writer(fh)
        w.writerow(["eps", "j_plus", "j_minus", "r1", "r2", "r_eps", "note"])
        for i, e in enumerate(sweep.eps):
            w.writerow([fmt(e), fmt(sweep.j_plus[i]), fmt(sweep.j_minus[i]),
                        fmt(sweep.r1[i]), fmt(sweep.r2[i]), fmt(sweep.r_eps[i]), ""])
        for e in sweep.dropped:
            w.writerow([fmt(e), "", "", "", "", "", "dropped"])
        w.writerow(["extrapolated", "", "", fmt(sweep.j1_fd), fmt(sweep.j2_fd), "", ""])


def write_invariants(path, rows):
    """invariants.csv rows: (check_name, value, threshold, passed)."""
    with _open_csv(path) as fh:
        w = _writer(fh)
        w.writerow(["check_name", "value", "threshold", "pass"])
        for name, value, threshold, ok in rows:
            w.writerow([name, fmt(value), fmt(threshold), fmt(bool(ok))])


def convergence_orders(values, to_zero=False):
    """Observed log2 orders from values on meshes h, h/2, h/4, ...

    For quantities with limit zero the order is log2(v_k / v_{k+1}); for
    quantities with unknown limit it comes from consecutive differences and
    needs three levels.  Slots without an estimate hold None.
    """
    v = [float(x) for x in values]
    orders = [None] * len(v)
    if to_zero:
        for k in range(1, len(v)):
            if v[k] != 0 and v[k - 1] != 0:
                orders[k] = float(np.log2(abs(v[k - 1]) / abs(v[k])))
    else:
        for k in range(2, len(v)):
            d_prev = abs(v[k - 2] - v[k - 1])
            d_curr = abs(v[k - 1] - v[k])
            if d_prev > 0 and d_curr > 0:
                orders[k] = float(np.log2(d_prev / d_curr))
    return orders


def write_convergence(path, levels, h_list, table):
    """convergence.csv: long format, one row per (quantity, level).

    ``table`` maps quantity name -> (values per level, to_zero flag).
    """
    with _open_csv(path) as fh:
        w = _writer(fh)
        w.writerow(["quantity", "level", "h", "value", "order"])
        for name, (values, to_zero) in table.items():
            orders = convergence_orders(values, to_zero=to_zero)
            for k in range(levels):
                w.writerow([name, fmt(k), fmt(h_list[k]),
                            fmt(values[k]), fmt(orders[k])])


# -- VTK -------------------------------------------------------------------


def write_vtk(path, state: StateSolution, V=None, part=FULL_PART,
              title="state fields"):
    """Legacy ASCII VTK with u, |grad u|, sigma, and boundary C.n point data.

    Each P2 triangle is emitted as four linear sub-triangles through its
    midpoints; dof values become POINT_DATA.  When a deformation field is
    given, the normal flux density of the second-derivative boundary
    representation is sampled at boundary dofs (zero elsewhere).
    """
    mesh = state.mesh
    dm = dofmap(mesh)
    pts = dm.dof_points
    ed = dm.element_dofs
    # local corners (0,1,2) and opposite-layout midpoints m01=3, m12=4, m20=5
    sub = np.concatenate([
        ed[:, [0, 3, 5]], ed[:, [1, 4, 3]], ed[:, [2, 5, 4]], ed[:, [3, 4, 5]],
    ], axis=0)

    u = state.u.values
    gn = np.hypot(state.grad_u.values[:, 0], state.grad_u.values[:, 1])
    sig = state.sigma.values

    cn = None
    if V is not None:
        bq = boundary_quad(mesh)
        nrm = np.hypot(bq.dof_normal[:, 0], bq.dof_normal[:, 1])
        bsel = np.nonzero(nrm > 0.5)[0]
        cn = np.zeros(dm.n_dofs)
        cn[bsel] = field_C(state, V, part=part)(pts[bsel], bq.dof_normal[bsel])

    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(title + "\n")
        fh.write("ASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {len(pts)} double\n")
        for p in pts:
            fh.write(f"{fmt(p[0])} {fmt(p[1])} 0\n")
        fh.write(f"CELLS {len(sub)} {4 * len(sub)}\n")
        for t in sub:
            fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")
        fh.write(f"CELL_TYPES {len(sub)}\n")
        fh.write("5\n" * len(sub))
        fh.write(f"POINT_DATA {len(pts)}\n")
        fh.write("SCALARS u double 1\nLOOKUP_TABLE default\n")
        for v in u:
            fh.write(fmt(v) + "\n")
        fh.write("SCALARS grad_u_norm double 1\nLOOKUP_TABLE default\n")
        for v in gn:
            fh.write(fmt(v) + "\n")
        fh.write("VECTORS sigma double\n")
        for s in sig:
            fh.write(f"{fmt(s[0])} {fmt(s[1])} 0\n")
        if cn is not None:
            fh.write("SCALARS C_dot_n double 1\nLOOKUP_TABLE default\n")
            for v in cn:
                fh.write(fmt(v) + "\n")
