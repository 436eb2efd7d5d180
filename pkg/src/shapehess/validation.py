"""Independent oracles for the derivative routes.

Finite-difference quotients on deformed meshes, Richardson extrapolation of
their even error expansions, and the difference-quotient minimizer check that
certifies the variational limit behind the volume route.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import (
    ConfigError,
    InvertedElement,
    NonNormalDeformation,
    SupportViolation,
    UnsupportedCombination,
    WrongPair,
)
from .fem import boundary_quad, volume_quad
from .integrands import ConvexPair
from .mesh import DeformationField, Mesh2D, deform
from .shape_calculus import (
    DerivativeReport,
    check_divA,
    check_divB,
    first_derivative_boundary,
    first_derivative_volume,
    second_derivative_boundary,
    second_derivative_ptorsion,
    second_derivative_torsion,
    second_derivative_volume,
    volume_samples,
)
from .solver import StateSolution, solve_state

DEFAULT_EPS = (0.08, 0.04, 0.02, 0.01)


@dataclass
class FdSweep:
    """Finite-difference shape quotients J(Omega_eps) along one field."""

    eps: np.ndarray        # kept step sizes, strictly decreasing
    j_zero: float
    j_plus: np.ndarray     # J on deform(mesh, V, +eps)
    j_minus: np.ndarray    # J on deform(mesh, V, -eps)
    r1: np.ndarray         # central first quotients
    r2: np.ndarray         # central second quotients
    r_eps: np.ndarray      # one-sided second quotients 2(J(e) - J - e J1)/e^2
    j1_fd: float           # Richardson-extrapolated first derivative
    j2_fd: float           # Richardson-extrapolated second derivative
    j1_err: float          # spread of the last two extrapolation stages
    j2_err: float
    max_grad: float        # Lipschitz proxy over all deformed solves
    dropped: Tuple[float, ...] = field(default_factory=tuple)
    notes: Tuple[str, ...] = field(default_factory=tuple)


def _richardson(eps, q):
    """Eliminate the eps^2 error term pairwise; return (value, spread).

    The quotients are assumed to have an even error expansion q(e) = q0 +
    c e^2 + O(e^4); each consecutive pair gives one extrapolated value and
    the spread of the last two stages is the reported error bar.
    """
    q = np.asarray(q, dtype=float)
    if len(q) == 1:
        return float(q[0]), float("nan")
    ratios = [
        (q[i + 1] * eps[i] ** 2 - q[i] * eps[i + 1] ** 2)
        / (eps[i] ** 2 - eps[i + 1] ** 2)
        for i in range(len(q) - 1)
    ]
    if len(ratios) == 1:
        return float(ratios[0]), float(abs(ratios[0] - q[-1]))
    return float(ratios[-1]), float(abs(ratios[-1] - ratios[-2]))


def fd_sweep(
    mesh: Mesh2D,
    pair: ConvexPair,
    V: DeformationField,
    state: Optional[StateSolution] = None,
    eps_list: Sequence[float] = DEFAULT_EPS,
) -> FdSweep:
    """Solve on deformed meshes and form central difference quotients.

    Each eps solves the state problem on deform(mesh, V, +-eps), warm-started
    from the undeformed solution (dof values ride with the mesh).  Steps that
    invert an element are dropped and flagged.
    """
    eps_arr = np.array(sorted(set(float(e) for e in eps_list), reverse=True))
    if len(eps_arr) == 0 or eps_arr[-1] <= 0:
        raise ConfigError("eps_list must contain positive step sizes")
    if state is None:
        state = solve_state(mesh, pair)
    j0 = state.J_value
    j1_ref = first_derivative_volume(state, V)

    kept, jp, jm, dropped, notes = [], [], [], [], []
    max_grad = state.max_grad
    for e in eps_arr:
        try:
            mp = deform(mesh, V, e)
            mm = deform(mesh, V, -e)
        except InvertedElement as exc:
            dropped.append(float(e))
            notes.append(f"eps={e:g} dropped: {exc.message}")
            continue
        sp = solve_state(mp, pair, initial=state.u.values)
        sm = solve_state(mm, pair, initial=state.u.values)
        kept.append(e)
        jp.append(sp.J_value)
        jm.append(sm.J_value)
        max_grad = max(max_grad, sp.max_grad, sm.max_grad)
    if not kept:
        raise ConfigError("every eps in the sweep inverted an element")

    eps_k = np.array(kept)
    jp = np.array(jp)
    jm = np.array(jm)
    r1 = (jp - jm) / (2.0 * eps_k)
    r2 = (jp - 2.0 * j0 + jm) / eps_k**2
    r_eps = 2.0 * (jp - j0 - eps_k * j1_ref) / eps_k**2
    j1_fd, j1_err = _richardson(eps_k, r1)
    j2_fd, j2_err = _richardson(eps_k, r2)
    return FdSweep(
        eps=eps_k,
        j_zero=j0,
        j_plus=jp,
        j_minus=jm,
        r1=r1,
        r2=r2,
        r_eps=r_eps,
        j1_fd=j1_fd,
        j2_fd=j2_fd,
        j1_err=j1_err,
        j2_err=j2_err,
        max_grad=max_grad,
        dropped=tuple(dropped),
        notes=tuple(notes),
    )


def gamma_limit_check(
    state: StateSolution,
    V: DeformationField,
    eps_list: Sequence[float] = (0.08, 0.04, 0.02, 0.01),
):
    """L2 distances of difference-quotient minimizers to <V, grad u>.

    w_eps(x) = (u(x + eps V(x)) - u(x)) / eps is the minimizer of the
    transported quotient functional; it must converge to <V, grad u> as eps
    shrinks, down to the interpolation floor of the mesh.  Requires V to
    vanish on the boundary.
    """
    s = volume_samples(state)
    Vq = V.value(s.x)
    vmax = float(np.max(np.hypot(Vq[:, 0], Vq[:, 1])))
    bq = boundary_quad(state.mesh)
    Vb = V.value(bq.x.reshape(-1, 2))
    bmax = float(np.max(np.hypot(Vb[:, 0], Vb[:, 1]))) if len(Vb) else 0.0
    if bmax > 1e-12 * max(vmax, 1e-300):
        raise SupportViolation(
            f"deformation reaches the boundary (max |V| on it: {bmax:.3e})"
        )
    target = np.einsum("mi,mi->m", Vq, s.g)
    out = []
    for e in eps_list:
        w_eps = (state.u.eval_at(s.x + float(e) * Vq) - s.u) / float(e)
        out.append(float(np.sqrt(np.sum(s.w * (w_eps - target) ** 2))))
    return out


@dataclass
class ReportOptions:
    """Switches for full_report: which oracles and extras to run."""

    with_fd: bool = False
    eps_list: Tuple[float, ...] = DEFAULT_EPS
    with_special: bool = True
    rho_rel: float = 1e-6


def full_report(
    mesh: Mesh2D,
    pair: ConvexPair,
    V: DeformationField,
    options: Optional[ReportOptions] = None,
    state: Optional[StateSolution] = None,
) -> DerivativeReport:
    """Solve the state and evaluate every enabled derivative route on it."""
    opt = options or ReportOptions()
    if state is None:
        state = solve_state(mesh, pair)
    notes = []
    njunc = mesh.dn_junction_count()
    if njunc:
        notes.append(
            f"{njunc} Dirichlet-Neumann junctions: boundary-route integrands "
            "are singular there and the routes need not agree"
        )

    j1v = first_derivative_volume(state, V)
    j1b = first_derivative_boundary(state, V)
    j2v = second_derivative_volume(state, V, rho_rel=opt.rho_rel)
    j2b = second_derivative_boundary(state, V, rho_rel=opt.rho_rel)

    j2s = None
    if opt.with_special:
        try:
            if pair.is_torsion:
                j2s = second_derivative_torsion(state, V)
            elif pair.p_exponent is not None:
                j2s = second_derivative_ptorsion(state, V, rho_rel=opt.rho_rel)
        except (WrongPair, UnsupportedCombination, NonNormalDeformation) as exc:
            notes.append(f"special route skipped: {exc}")

    fd1 = fd2 = None
    if opt.with_fd:
        sweep = fd_sweep(mesh, pair, V, state=state, eps_list=opt.eps_list)
        fd1, fd2 = sweep.j1_fd, sweep.j2_fd
        notes.extend(sweep.notes)

    return DerivativeReport(
        J_value=state.J_value,
        J1_volume=j1v,
        J1_boundary=j1b,
        J2_volume=j2v,
        J2_boundary=j2b,
        J2_special=j2s,
        fd_first=fd1,
        fd_second=fd2,
        divA_residual=check_divA(state),
        divB_residual=check_divB(state, V),
        route_disagreement=abs(j2v - j2b),
        h=mesh.mesh_size,
        eps_list=tuple(opt.eps_list) if opt.with_fd else (),
        max_grad=state.max_grad,
        notes=tuple(notes),
    )
