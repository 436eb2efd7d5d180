#!/usr/bin/env python3
"""Mesh refinement study: route values, route disagreements, residuals.

Runs the full derivative report on a sequence of meshes h, h/2, h/4, ... and
prints each tracked quantity with its observed convergence order.  Quantities
with limit zero (route disagreements, divergence residuals) use the ratio of
consecutive values; the others use consecutive differences.
"""

import argparse
import math

from shapehess import (
    ReportOptions,
    dilation_field,
    full_report,
    generate_disk,
    generate_ellipse,
    make_torsion,
    polynomial_field,
)


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--geometry", choices=("disk", "ellipse"), default="disk")
    ap.add_argument("--h", type=float, default=0.2, help="coarsest mesh size")
    ap.add_argument("--levels", type=int, default=3)
    ap.add_argument("--lam", type=float, default=1.0)
    ap.add_argument("--field", choices=("dilation", "polynomial"),
                    default="dilation")
    return ap.parse_args()


def build_mesh(geometry, h):
    if geometry == "disk":
        return generate_disk(1.0, h)
    return generate_ellipse(1.2, 0.8, h)


def orders(values, to_zero):
    out = [None] * len(values)
    if to_zero:
        for k in range(1, len(values)):
            if values[k] and values[k - 1]:
                out[k] = math.log2(abs(values[k - 1]) / abs(values[k]))
    else:
        for k in range(2, len(values)):
            d0 = abs(values[k - 2] - values[k - 1])
            d1 = abs(values[k - 1] - values[k])
            if d0 > 0 and d1 > 0:
                out[k] = math.log2(d0 / d1)
    return out


def main():
    args = parse_args()
    pair = make_torsion(args.lam)
    V = (dilation_field() if args.field == "dilation"
         else polynomial_field([(1, 1, 0.5), (0, 0, 0.2)],
                               [(2, 0, -0.3), (0, 1, 1.0)]))

    h_list, reports = [], []
    for level in range(args.levels):
        mesh = build_mesh(args.geometry, args.h / 2.0**level)
        reports.append(full_report(mesh, pair, V, ReportOptions()))
        h_list.append(mesh.mesh_size)
        print(f"level {level}: h = {mesh.mesh_size:.4f} done")

    table = [
        ("J", [r.J_value for r in reports], False),
        ("J1 volume", [r.J1_volume for r in reports], False),
        ("J2 volume", [r.J2_volume for r in reports], False),
        ("J1 route gap", [abs(r.J1_volume - r.J1_boundary) for r in reports], True),
        ("J2 route gap", [r.route_disagreement for r in reports], True),
        ("div A residual", [r.divA_residual for r in reports], True),
        ("div B residual", [r.divB_residual for r in reports], True),
    ]
    print(f"\n{'quantity':<16s}" + "".join(f"{h:>14.4f}" for h in h_list))
    for name, values, to_zero in table:
        cells = "".join(f"{v:>14.6e}" for v in values)
        ords = orders(values, to_zero)
        otxt = ", ".join(f"{o:.2f}" for o in ords if o is not None) or "-"
        print(f"{name:<16s}{cells}   order: {otxt}")


if __name__ == "__main__":
    main()
