#!/usr/bin/env python3
"""Dilation of the torsion disk: every derivative route against closed forms.

For the unit disk with the quadratic pair and V(x) = x the exact values are
J = pi/16 * lam^2 R^4, J' = 4J and J'' = 12J, which makes this the canonical
smoke test for the whole derivative stack.  The script solves the state
problem, evaluates both first-derivative routes, all three second-derivative
routes, and a finite-difference sweep, and prints everything next to the
closed-form targets.
"""

import argparse
import math

from shapehess import (
    dilation_field,
    fd_sweep,
    first_derivative_boundary,
    first_derivative_volume,
    generate_disk,
    l2_form,
    make_torsion,
    second_derivative_boundary,
    second_derivative_torsion,
    second_derivative_volume,
    solve_state,
)


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--h", type=float, default=0.05, help="target mesh size")
    ap.add_argument("--radius", type=float, default=1.0)
    ap.add_argument("--lam", type=float, default=1.0, help="linear term weight")
    ap.add_argument("--eps", type=float, nargs="+", default=[0.08, 0.04, 0.02, 0.01],
                    help="finite-difference step sizes")
    return ap.parse_args()


def row(name, value, target=None):
    if target is None:
        print(f"  {name:<28s} {value: .10f}")
    else:
        err = abs(value - target) / abs(target)
        print(f"  {name:<28s} {value: .10f}   target {target: .10f}   rel err {err:.2e}")


def main():
    args = parse_args()
    j_exact = math.pi / 16.0 * args.lam**2 * args.radius**4

    mesh = generate_disk(args.radius, args.h)
    pair = make_torsion(args.lam)
    state = solve_state(mesh, pair)
    V = dilation_field()

    print(f"disk R={args.radius} lam={args.lam} h={mesh.mesh_size:.4f} "
          f"({mesh.n_vertices} vertices)")
    print("functional")
    row("J", state.J_value, j_exact)
    print("first derivative (V = x)")
    row("volume route", first_derivative_volume(state, V), 4 * j_exact)
    row("boundary route", first_derivative_boundary(state, V), 4 * j_exact)
    print("second derivative (V = x)")
    row("volume route", second_derivative_volume(state, V), 12 * j_exact)
    row("boundary route", second_derivative_boundary(state, V), 12 * j_exact)
    row("curvature route", second_derivative_torsion(state, V), 12 * j_exact)
    row("boundary form at V.n", l2_form(state, lambda x: (x * x).sum(axis=1) ** 0.5
                                        / args.radius), 12 * j_exact)

    print(f"finite differences, eps = {args.eps}")
    sweep = fd_sweep(mesh, pair, V, state=state, eps_list=tuple(args.eps))
    print(f"  {'eps':>8s} {'central 1st':>14s} {'central 2nd':>14s} "
          f"{'one-sided 2nd':>14s}")
    for k, e in enumerate(sweep.eps):
        print(f"  {e:8.3f} {sweep.r1[k]:14.8f} {sweep.r2[k]:14.8f} "
              f"{sweep.r_eps[k]:14.8f}")
    row("extrapolated first", sweep.j1_fd, 4 * j_exact)
    row("extrapolated second", sweep.j2_fd, 12 * j_exact)
    for note in sweep.notes:
        print(f"  note: {note}")


if __name__ == "__main__":
    main()
