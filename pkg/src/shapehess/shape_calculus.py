"""First and second shape derivatives of J(Omega) along deformation fields.

Volume routes integrate transported-energy expansions over the domain; the
boundary routes integrate flux tensors over the tagged boundary and share one
auxiliary quadratic problem: minimize the second-variation form with
inhomogeneous Dirichlet data and an optional Neumann load.  All state
quantities are evaluated from the recovered (continuous) gradient, one-sided
from the adjacent element on the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np

from .errors import (
    DegenerateForm,
    NonNormalDeformation,
    SolverBreakdown,
    UnsupportedCombination,
    WrongPair,
)
from .fem import (
    EDGE_POINTS,
    FEFunction,
    SparseSpd,
    assemble_linear_functional,
    assemble_spd_values,
    boundary_quad,
    dofmap,
    p2_values,
    solve_constrained,
    volume_quad,
    weak_divergence_residual,
)
from .integrands import QuadraticFormSpec
from .mesh import DIRICHLET, NEUMANN, DeformationField, Mesh2D
from .solver import StateSolution

RHO_REL_DEFAULT = 1e-6

DIRICHLET_PART = "DIRICHLET"
NEUMANN_PART = "NEUMANN"
FULL_PART = "FULL"


# -- sampled state fields ----------------------------------------------------


@dataclass
class VolumeSamples:
    x: np.ndarray      # (m, 2) quadrature points
    w: np.ndarray      # (m,) weights including |det J|
    u: np.ndarray      # (m,)
    g: np.ndarray      # (m, 2) recovered gradient
    hess: np.ndarray   # (m, 2, 2) recovered symmetric Hessian


@dataclass
class BoundarySamples:
    x: np.ndarray
    w: np.ndarray
    n: np.ndarray      # outward unit normal
    t: np.ndarray      # unit tangent, domain on the left
    kappa: np.ndarray  # discrete curvature
    is_d: np.ndarray   # Dirichlet mask
    u: np.ndarray
    g: np.ndarray
    hess: np.ndarray
    edge_len: np.ndarray


def volume_samples(state: StateSolution, order: int = 4) -> VolumeSamples:
    key = f"_vol_samples_{order}"
    if not hasattr(state, key):
        vq = volume_quad(state.mesh, order)
        nt, nq = vq.wdet.shape
        tris = np.repeat(np.arange(nt), nq)
        bary = np.broadcast_to(vq.bary, (nt, nq, 3)).reshape(-1, 3)
        setattr(
            state,
            key,
            VolumeSamples(
                x=vq.x.reshape(-1, 2),
                w=vq.wdet.ravel(),
                u=state.u.eval_on(tris, bary),
                g=state.grad_u.eval_on(tris, bary),
                hess=state.hess_on(tris, bary),
            ),
        )
    return getattr(state, key)


def boundary_samples(state: StateSolution) -> BoundarySamples:
    if not hasattr(state, "_bdy_samples"):
        bq = boundary_quad(state.mesh)
        nb = len(bq.tags)
        tris = np.repeat(bq.tri, 3)
        bary = bq.bary.reshape(-1, 3)
        state._bdy_samples = BoundarySamples(
            x=bq.x.reshape(-1, 2),
            w=bq.w.ravel(),
            n=np.repeat(bq.normal, 3, axis=0),
            t=np.repeat(bq.tangent, 3, axis=0),
            kappa=bq.kappa.ravel(),
            is_d=np.repeat(bq.tags == DIRICHLET, 3),
            u=state.u.eval_on(tris, bary),
            g=state.grad_u.eval_on(tris, bary),
            hess=state.hess_on(tris, bary),
            edge_len=np.repeat(bq.length, 3),
        )
    return state._bdy_samples


def dual_jacobian_trace(state: StateSolution):
    """Boundary trace of the dual-field Jacobian D(sigma), reconstructed.

    Differentiating recovered fields in the normal direction does not
    converge on polygonal boundary approximations (the discrete solution
    carries the polygon's boundary layer), so the trace is rebuilt from
    convergent quantities only: the tangential derivative of the recovered
    dual field along each boundary edge, closed by the optimality identity
    div sigma = g'(u) for the normal-normal component.

    Returns (dst_t, dst_n, ds_nn) per boundary quadrature point:
    <D(sigma) t, t>, <D(sigma) t, n>, and <D(sigma) n, n>.
    """
    if not hasattr(state, "_dsig_trace"):
        mesh = state.mesh
        bq = boundary_quad(mesh)
        e = mesh.boundary_edges
        mid = mesh.n_vertices + mesh.boundary_edge_index
        sig = state.sigma.values
        xi = EDGE_POINTS
        dq = (
            sig[e[:, 0]][:, None, :] * (4.0 * xi - 3.0)[None, :, None]
            + sig[e[:, 1]][:, None, :] * (4.0 * xi - 1.0)[None, :, None]
            + sig[mid][:, None, :] * (4.0 - 8.0 * xi)[None, :, None]
        )
        d = mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]]
        sgn = np.sign(np.einsum("bi,bi->b", d, bq.tangent))
        dsig_t = ((sgn / bq.length)[:, None, None] * dq).reshape(-1, 2)
        s = boundary_samples(state)
        dst_t = np.einsum("mi,mi->m", dsig_t, s.t)
        dst_n = np.einsum("mi,mi->m", dsig_t, s.n)
        ds_nn = state.pair.sharp().dg(s.u) - dst_t
        state._dsig_trace = (dst_t, dst_n, ds_nn)
    return state._dsig_trace


def _dsigma_dot_v_n(state, V):
    """<D(sigma) V, n> at boundary quadrature points via the trace identities."""
    s = boundary_samples(state)
    _, dst_n, ds_nn = dual_jacobian_trace(state)
    Vv = V.value(s.x)
    Vt = np.einsum("mi,mi->m", Vv, s.t)
    Vn = np.einsum("mi,mi->m", Vv, s.n)
    return Vt * dst_n + Vn * ds_nn


def p_weight(z, p, rho):
    """Weight matrix |z|^(p-2) (I + (p-2) zhat x zhat) with |z| floored at rho."""
    z = np.asarray(z, dtype=float)
    r = np.hypot(z[:, 0], z[:, 1])
    rf = np.maximum(r, rho)
    base = rf ** (p - 2.0)
    P = base[:, None, None] * np.eye(2)[None, :, :]
    pos = r > 0
    zh = np.zeros_like(z)
    zh[pos] = z[pos] / r[pos, None]
    P += (p - 2.0) * base[:, None, None] * zh[:, :, None] * zh[:, None, :]
    return P


def _q_coefficients(state: StateSolution, s_u, s_g, rho_rel=RHO_REL_DEFAULT):
    """Coefficients (matrix on gradients, scalar on values) of the Q-form."""
    pair = state.pair.sharp()
    p = pair.p_exponent
    if p is not None and p != 2.0:
        rho = rho_rel * max(state.max_grad, 1e-300)
        Hf = p_weight(s_g, p, rho)
    else:
        Hf = pair.hess_f(s_g)
    return Hf, pair.d2g(s_u)


def q_matrix(state: StateSolution, rho_rel=RHO_REL_DEFAULT) -> SparseSpd:
    """Matrix K with <Kv, v> = the second-variation form of the state."""
    key = f"_q_matrix_{rho_rel:.3e}"
    if not hasattr(state, key):
        s = volume_samples(state)
        Hf, c = _q_coefficients(state, s.u, s.g, rho_rel)
        nt = state.mesh.n_triangles
        nq = len(volume_quad(state.mesh, 4).bary)
        setattr(
            state,
            key,
            assemble_spd_values(
                state.mesh, Hf.reshape(nt, nq, 2, 2), c.reshape(nt, nq)
            ),
        )
    return getattr(state, key)


def state_quadratic_spec(state: StateSolution, rho_rel=RHO_REL_DEFAULT) -> QuadraticFormSpec:
    """Point-callable coefficients of the second-variation form of the state."""

    def matrix_field(points):
        g = state.grad_u.eval_at(points)
        u = state.u.eval_at(points)
        return _q_coefficients(state, u, g, rho_rel)[0]

    def scalar_field(points):
        g = state.grad_u.eval_at(points)
        u = state.u.eval_at(points)
        return _q_coefficients(state, u, g, rho_rel)[1]

    return QuadraticFormSpec(matrix_field=matrix_field, scalar_field=scalar_field)


# -- auxiliary quadratic problem ----------------------------------------------


@dataclass
class AuxQuadraticProblem:
    """Minimization of <Kv, v> + <load, v> subject to Dirichlet data."""

    stiffness: SparseSpd
    neumann_load: np.ndarray
    fixed_dofs: np.ndarray
    dirichlet_data: np.ndarray
    minimizer: FEFunction
    min_value: float


def _minimize_quadratic(mesh, K, load, fixed_dofs, fixed_values) -> AuxQuadraticProblem:
    try:
        v = solve_constrained(K, -0.5 * load, fixed_dofs, fixed_values)
    except SolverBreakdown as exc:
        raise DegenerateForm(f"quadratic form not solvable: {exc.message}") from exc
    value = float(v @ (K.mat @ v) + load @ v)
    return AuxQuadraticProblem(
        stiffness=K,
        neumann_load=load,
        fixed_dofs=fixed_dofs,
        dirichlet_data=fixed_values,
        minimizer=FEFunction(mesh, v),
        min_value=value,
    )


def _boundary_trace_data(state: StateSolution, weight_at_dofs):
    """Dirichlet data -weight * d_n(u) at the Dirichlet dofs.

    weight_at_dofs maps (points, normals) at dof locations to scalars (V_n
    for deformation routes, phi for the quadratic boundary form).
    """
    dm = dofmap(state.mesh)
    bq = boundary_quad(state.mesh)
    d = dm.dirichlet_dofs
    nrm = bq.dof_normal[d]
    pts = dm.dof_points[d]
    dn_u = np.einsum("mi,mi->m", state.grad_u.values[d], nrm)
    return d, -weight_at_dofs(pts, nrm) * dn_u


def assemble_boundary_functional(mesh: Mesh2D, sel, dens) -> np.ndarray:
    """l_i = integral over selected boundary edges of dens * phi_i."""
    bq = boundary_quad(mesh)
    dm = dofmap(mesh)
    out = np.zeros(dm.n_dofs)
    if not np.any(sel):
        return out
    bary = bq.bary[sel].reshape(-1, 3)
    N = p2_values(bary)
    dofs = dm.element_dofs[np.repeat(bq.tri[sel], 3)]
    contrib = (bq.w[sel].ravel() * dens)[:, None] * N
    np.add.at(out, dofs, contrib)
    return out


@dataclass
class DerivativeReport:
    """All derivative routes, oracles, and residuals for one (state, V) pair."""

    J_value: float
    J1_volume: float
    J1_boundary: float
    J2_volume: float
    J2_boundary: float
    J2_special: Optional[float]
    fd_first: Optional[float]
    fd_second: Optional[float]
    divA_residual: float
    divB_residual: float
    route_disagreement: float
    h: float
    eps_list: Tuple[float, ...]
    max_grad: float
    notes: Tuple[str, ...] = field(default_factory=tuple)


# -- flux tensors --------------------------------------------------------------


def _pair_fields(state, u, g):
    pair = state.pair.sharp()
    sig = pair.grad_f(g)
    Hf = pair.hess_f(g)
    fg = pair.f(g) + pair.g(u)
    return pair, sig, Hf, fg


def tensor_A(state: StateSolution) -> Callable[[np.ndarray], np.ndarray]:
    """Flux tensor A = grad(u) x sigma - (f + g) I as a map of points."""

    def at(points):
        u = state.u.eval_at(points)
        g = state.grad_u.eval_at(points)
        _, sig, _, fg = _pair_fields(state, u, g)
        A = g[:, :, None] * sig[:, None, :]
        A[:, 0, 0] -= fg
        A[:, 1, 1] -= fg
        return A

    return at


def _B_values(state, V, x, u, g, hess):
    _, sig, Hf, _ = _pair_fields(state, u, g)
    Vv = V.value(x)
    DV = V.jacobian(x)
    divV = DV[:, 0, 0] + DV[:, 1, 1]
    B = np.einsum("mij,mjk,mk->mi", Hf, hess, Vv)
    B -= np.einsum("mij,mj->mi", DV, sig)
    B += divV[:, None] * sig
    return B


def field_B(state: StateSolution, V: DeformationField) -> Callable:
    """Flux of the derivative of the optimality system along V (map of points)."""

    def at(points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        from .fem import locator

        tris, bary = locator(state.mesh).locate(points)
        u = state.u.eval_on(tris, bary)
        g = state.grad_u.eval_on(tris, bary)
        hs = state.hess_on(tris, bary)
        return _B_values(state, V, points, u, g, hs)

    return at


def check_divA(state: StateSolution) -> float:
    """Weak residual of div A = 0, maximized over the two rows of A."""
    s = volume_samples(state)
    _, sig, _, fg = _pair_fields(state, s.u, s.g)
    A = s.g[:, :, None] * sig[:, None, :]
    A[:, 0, 0] -= fg
    A[:, 1, 1] -= fg
    nt = state.mesh.n_triangles
    nq = len(volume_quad(state.mesh, 4).bary)
    zero = np.zeros((nt, nq))
    return max(
        weak_divergence_residual(state.mesh, A[:, i, :].reshape(nt, nq, 2), zero)
        for i in range(2)
    )


def check_divB(state: StateSolution, V: DeformationField) -> float:
    """Weak residual of div B = g''(u) <V, grad u> + g'(u) div V."""
    s = volume_samples(state)
    pair = state.pair.sharp()
    B = _B_values(state, V, s.x, s.u, s.g, s.hess)
    DV = V.jacobian(s.x)
    divV = DV[:, 0, 0] + DV[:, 1, 1]
    theta = np.einsum("mi,mi->m", V.value(s.x), s.g)
    target = pair.d2g(s.u) * theta + pair.dg(s.u) * divV
    nt = state.mesh.n_triangles
    nq = len(volume_quad(state.mesh, 4).bary)
    return weak_divergence_residual(
        state.mesh, B.reshape(nt, nq, 2), target.reshape(nt, nq)
    )


def _C_dot_n(state, V, which, x, n, u, g, hess=None, dsig_v_n=None):
    """<C_part, n> at boundary samples for part in {DIRICHLET, NEUMANN, FULL}.

    The Hessian enters only through <D(sigma) V, n>; it is taken from the
    raw recovered Hessian (``hess``) or a precomputed trace (``dsig_v_n``).
    """
    _, sig, Hf, fg = _pair_fields(state, u, g)
    pair = state.pair.sharp()
    Vv = V.value(x)
    DV = V.jacobian(x)
    divV = DV[:, 0, 0] + DV[:, 1, 1]
    theta = np.einsum("mi,mi->m", Vv, g)
    if dsig_v_n is None:
        HfHsV = np.einsum("mij,mjk,mk->mi", Hf, hess, Vv)
        dsig_v_n = np.einsum("mi,mi->m", HfHsV, n)
    DVsig = np.einsum("mij,mj->mi", DV, sig)
    # (div V I - DV) applied to a vector field
    dIm = lambda vec: divV[:, None] * vec - np.einsum("mij,mj->mi", DV, vec)
    Vn = np.einsum("mi,mi->m", Vv, n)

    if which == DIRICHLET_PART:
        fstar = np.einsum("mi,mi->m", sig, g) - pair.f(g)
        out = theta * dsig_v_n
        out += fstar * np.einsum("mi,mi->m", dIm(Vv), n)
        return out
    if which == NEUMANN_PART:
        out = -theta * dsig_v_n
        out += theta * np.einsum("mi,mi->m", DVsig, n)
        out += np.einsum("mi,mi->m", DVsig, g) * Vn
        out -= fg * np.einsum("mi,mi->m", dIm(Vv), n)
        return out
    if which == FULL_PART:
        out = -theta * dsig_v_n
        out -= theta * np.einsum("mi,mi->m", dIm(sig), n)
        out += np.einsum("mi,mi->m", DVsig, g) * Vn
        out -= np.einsum("mij,mj,mi->m", DV, Vv, g) * np.einsum("mi,mi->m", sig, n)
        out -= fg * np.einsum("mi,mi->m", dIm(Vv), n)
        return out
    raise WrongPair(f"unknown boundary part '{which}'")


def field_C(state: StateSolution, V: DeformationField, part=FULL_PART) -> Callable:
    """Normal flux density of the second-derivative boundary representation.

    Returns a callable of (points, normals) giving <C_part, n>; points must
    lie on (or numerically near) the boundary, fields are one-sided traces.
    """

    def at(points, normals):
        from .fem import locator

        tris, bary = locator(state.mesh).locate(points)
        u = state.u.eval_on(tris, bary)
        g = state.grad_u.eval_on(tris, bary)
        hs = state.hess_on(tris, bary)
        return _C_dot_n(state, V, part, np.atleast_2d(points), normals, u, g, hs)

    return at


# -- first derivative -----------------------------------------------------------


def first_derivative_volume(state: StateSolution, V: DeformationField) -> float:
    """J'(Omega, V) = int A(u) : DV over the domain."""
    s = volume_samples(state)
    _, sig, _, fg = _pair_fields(state, s.u, s.g)
    DV = V.jacobian(s.x)
    divV = DV[:, 0, 0] + DV[:, 1, 1]
    integrand = np.einsum("mi,mij,mj->m", s.g, DV, sig) - fg * divV
    return float(np.sum(s.w * integrand))


def first_derivative_boundary(state: StateSolution, V: DeformationField) -> float:
    """J'(Omega, V) = int_D f*(sigma) V_n - int_N (f + g) V_n."""
    pair = state.pair.sharp()
    pair.require_f_conj()
    s = boundary_samples(state)
    _, sig, _, fg = _pair_fields(state, s.u, s.g)
    Vn = np.einsum("mi,mi->m", V.value(s.x), s.n)
    dens = np.where(s.is_d, pair.f_conj(sig), -fg)
    return float(np.sum(s.w * dens * Vn))


# -- second derivative: volume route ----------------------------------------------


def second_derivative_volume(
    state: StateSolution,
    V: DeformationField,
    rho_rel=RHO_REL_DEFAULT,
    details: bool = False,
):
    """J'' as minus the minimum of the transported second-order energy.

    The functional being minimized over fields vanishing on the Dirichlet
    part is quadratic; its minimizer approximates <V, grad u> when V is
    compactly supported.
    """
    mesh = state.mesh
    dm = dofmap(mesh)
    s = volume_samples(state)
    pair, sig, _, fg = _pair_fields(state, s.u, s.g)
    Hf, _ = _q_coefficients(state, s.u, s.g, rho_rel)
    gp = pair.dg(s.u)

    Vv = V.value(s.x)
    DV = V.jacobian(s.x)
    divV = DV[:, 0, 0] + DV[:, 1, 1]
    a2 = DV[:, 0, 0] * DV[:, 1, 1] - DV[:, 0, 1] * DV[:, 1, 0]
    a = np.einsum("mji,mj->mi", DV, s.g)  # DV^T grad u
    btil = np.einsum("mij,mj->mi", DV, sig) - divV[:, None] * sig
    Hfa = np.einsum("mij,mj->mi", Hf, a)

    const = float(
        np.sum(
            s.w
            * (
                2.0 * fg * a2
                + np.einsum("mi,mi->m", Hfa, a)
                + 2.0 * np.einsum("mi,mi->m", btil, a)
            )
        )
    )
    nt = mesh.n_triangles
    nq = len(volume_quad(mesh, 4).bary)
    vec = (-2.0 * (Hfa + btil)).reshape(nt, nq, 2)
    scal = (2.0 * divV * gp).reshape(nt, nq)
    load = assemble_linear_functional(mesh, vec_q=vec, scal_q=scal)

    K = q_matrix(state, rho_rel)
    zero = np.zeros(len(dm.dirichlet_dofs))
    aux = _minimize_quadratic(mesh, K, load, dm.dirichlet_dofs, zero)
    value = -(const + aux.min_value)
    if details:
        return value, aux
    return value


# -- second derivative: boundary route ----------------------------------------------


def boundary_B_dot_n(state: StateSolution, V: DeformationField) -> np.ndarray:
    """<B, n> at boundary quadrature points, Hessian via trace reconstruction."""
    s = boundary_samples(state)
    _, sig, _, _ = _pair_fields(state, s.u, s.g)
    DV = V.jacobian(s.x)
    divV = DV[:, 0, 0] + DV[:, 1, 1]
    Bn = _dsigma_dot_v_n(state, V)
    Bn -= np.einsum("mij,mj,mi->m", DV, sig, s.n)
    Bn += divV * np.einsum("mi,mi->m", sig, s.n)
    return Bn


def aux_boundary_problem(
    state: StateSolution, V: DeformationField, rho_rel=RHO_REL_DEFAULT
) -> AuxQuadraticProblem:
    """min Q(u, v) + 2 int_N v <B, n> over v = -V_n d_n(u) on the Dirichlet part."""
    mesh = state.mesh
    s = boundary_samples(state)
    sel_n = ~s.is_d
    Bn = boundary_B_dot_n(state, V)
    bq = boundary_quad(mesh)
    load = assemble_boundary_functional(
        mesh, bq.tags == NEUMANN, 2.0 * Bn[sel_n]
    )
    fixed, vals = _boundary_trace_data(
        state, lambda pts, nrm: np.einsum("mi,mi->m", V.value(pts), nrm)
    )
    return _minimize_quadratic(mesh, q_matrix(state, rho_rel), load, fixed, vals)


def second_derivative_boundary(
    state: StateSolution,
    V: DeformationField,
    rho_rel=RHO_REL_DEFAULT,
    details: bool = False,
):
    """J'' = int_D <C_D, n> + int_N <C_N, n> - min of the auxiliary problem."""
    s = boundary_samples(state)
    dvn = _dsigma_dot_v_n(state, V)
    cd = _C_dot_n(state, V, DIRICHLET_PART, s.x, s.n, s.u, s.g, dsig_v_n=dvn)
    cn = _C_dot_n(state, V, NEUMANN_PART, s.x, s.n, s.u, s.g, dsig_v_n=dvn)
    surface = float(np.sum(s.w * np.where(s.is_d, cd, cn)))
    aux = aux_boundary_problem(state, V, rho_rel)
    value = surface - aux.min_value
    if details:
        return value, aux
    return value


# -- specialized torsion routes ---------------------------------------------------


def _tangential_data(state, V):
    """V_n, V_t, and the tangential derivative of V_n along the boundary."""
    s = boundary_samples(state)
    Vv = V.value(s.x)
    DV = V.jacobian(s.x)
    Vn = np.einsum("mi,mi->m", Vv, s.n)
    Vt = np.einsum("mi,mi->m", Vv, s.t)
    dtVn = np.einsum("mij,mj,mi->m", DV, s.t, s.n) + s.kappa * Vt
    return Vn, Vt, dtVn


def second_derivative_torsion(
    state: StateSolution, V: DeformationField, details: bool = False
):
    """Curvature-based J'' for the torsion pair, mixed boundary conditions.

    Combines the normal-direction boundary terms, an auxiliary problem with
    data -V_n d_n(u), and the tangential coupling correction
    z = kappa V_t^2 - 2 V_t (d_t V_n) integrated against the first-derivative
    boundary densities.
    """
    if not state.pair.is_torsion:
        raise WrongPair("route requires the torsion pair (f = |z|^2/2, linear g)")
    mesh = state.mesh
    lam = state.pair.lam
    s = boundary_samples(state)
    Vn, Vt, dtVn = _tangential_data(state, V)
    dn_u = np.einsum("mi,mi->m", s.g, s.n)
    g2 = np.einsum("mi,mi->m", s.g, s.g)

    dens_d = -0.5 * Vn**2 * (2.0 * lam * dn_u + dn_u**2 * s.kappa)
    _, dst_n, ds_nn = dual_jacobian_trace(state)
    gt_all = np.einsum("mi,mi->m", s.g, s.t)
    hess_gn = gt_all * dst_n + dn_u * ds_nn  # <(grad^2 u) grad u, n> via traces
    dens_n = -0.5 * Vn**2 * ((-2.0 * lam * s.u + g2) * s.kappa + 2.0 * hess_gn)
    surface = float(np.sum(s.w * np.where(s.is_d, dens_d, dens_n)))

    # tangential coupling: first-derivative densities against z
    z = s.kappa * Vt**2 - 2.0 * Vt * dtVn
    fstar = 0.5 * g2
    fg = 0.5 * g2 - lam * s.u
    l1z = float(np.sum(s.w * np.where(s.is_d, fstar * z, -fg * z)))

    # auxiliary problem: data -V_n d_n u on the Dirichlet part,
    # load -2 int_N v <grad u, grad_T V_n>
    bq = boundary_quad(mesh)
    sel_n = ~s.is_d
    load = assemble_boundary_functional(
        mesh, bq.tags == NEUMANN, -2.0 * (gt_all * dtVn)[sel_n]
    )
    fixed, vals = _boundary_trace_data(
        state, lambda pts, nrm: np.einsum("mi,mi->m", V.value(pts), nrm)
    )
    aux = _minimize_quadratic(mesh, q_matrix(state), load, fixed, vals)
    value = surface + l1z - aux.min_value
    if details:
        return value, aux
    return value


def second_derivative_ptorsion(
    state: StateSolution,
    V: DeformationField,
    rho_rel=RHO_REL_DEFAULT,
    details: bool = False,
):
    """J'' for the p-power pair along normal fields, pure Dirichlet boundary.

    Requires V to have negligible tangential part on the boundary; the
    tolerance scales with the boundary edge length because smooth normal
    fields acquire O(h) tangential components on a polygonal boundary.
    """
    pair = state.pair.sharp()
    if pair.p_exponent is None or not pair.g_linear:
        raise WrongPair("route requires the p-power pair with linear g")
    if np.any(state.mesh.boundary_tags == NEUMANN):
        raise UnsupportedCombination(
            "p-power normal-field route is implemented for pure Dirichlet boundaries"
        )
    s = boundary_samples(state)
    Vv = V.value(s.x)
    Vn = np.einsum("mi,mi->m", Vv, s.n)
    Vtang = Vv - Vn[:, None] * s.n
    tang_mag = float(np.max(np.hypot(Vtang[:, 0], Vtang[:, 1])))
    vmax = float(np.max(np.hypot(Vv[:, 0], Vv[:, 1])))
    tol = 2.0 * state.mesh.max_boundary_edge_length * max(vmax, 1e-300)
    if tang_mag > tol:
        raise NonNormalDeformation(
            f"max tangential part {tang_mag:.3e} exceeds tolerance {tol:.3e}"
        )
    if pair.is_torsion:
        # p = 2 reduces term-by-term to the curvature route (which also
        # carries the tangential corrections for the residual O(h) parts)
        return second_derivative_torsion(state, V, details=details)

    p = pair.p_exponent
    lam = pair.lam
    dn_u = np.einsum("mi,mi->m", s.g, s.n)
    surface = -(1.0 / p) * float(
        np.sum(s.w * Vn**2 * (p * lam * dn_u + np.abs(dn_u) ** p * s.kappa))
    )
    fixed, vals = _boundary_trace_data(
        state, lambda pts, nrm: np.einsum("mi,mi->m", V.value(pts), nrm)
    )
    dm = dofmap(state.mesh)
    aux = _minimize_quadratic(
        state.mesh, q_matrix(state, rho_rel), np.zeros(dm.n_dofs), fixed, vals
    )
    value = surface - aux.min_value
    if details:
        return value, aux
    return value


def l2_form(state: StateSolution, phi, dphi_ds=None, details: bool = False):
    """Quadratic boundary form of the structure theorem, evaluated at phi.

    ``phi`` maps boundary points (m, 2) to scalars; ``dphi_ds`` optionally
    gives its tangential derivative as a function of (points, normals,
    tangents), otherwise a central difference along each straight edge is
    used.  Homogeneous of degree two in phi.
    """
    if not state.pair.is_torsion:
        raise WrongPair("boundary quadratic form requires the torsion pair")
    pair = state.pair.sharp()
    pair.require_f_conj()
    mesh = state.mesh
    s = boundary_samples(state)
    _, sig, _, fg = _pair_fields(state, s.u, s.g)
    ph = np.asarray(phi(s.x), dtype=float)
    if dphi_ds is not None:
        dph = np.asarray(dphi_ds(s.x, s.n, s.t), dtype=float)
    else:
        step = 1e-5 * s.edge_len
        dph = (
            np.asarray(phi(s.x + step[:, None] * s.t), dtype=float)
            - np.asarray(phi(s.x - step[:, None] * s.t), dtype=float)
        ) / (2.0 * step)

    dn_u = np.einsum("mi,mi->m", s.g, s.n)
    _, dst_n, ds_nn = dual_jacobian_trace(state)
    Dsig_nn = ds_nn
    fstar = pair.f_conj(sig)

    dens_d = ph**2 * (dn_u * Dsig_nn + fstar * s.kappa)

    sig_t = np.einsum("mi,mi->m", sig, s.t)
    g_t = np.einsum("mi,mi->m", s.g, s.t)
    # torsion-class pair: sigma = grad u, so D(sigma) traces are Hessian traces
    d_dn_u = dst_n + s.kappa * g_t
    ds_prod = 2.0 * ph * dph * dn_u + ph**2 * d_dn_u
    hess_sig_n = sig_t * dst_n + np.einsum("mi,mi->m", sig, s.n) * ds_nn
    dens_n = sig_t * ds_prod - ph**2 * (hess_sig_n + fg * s.kappa + dn_u * Dsig_nn)

    surface = float(np.sum(s.w * np.where(s.is_d, dens_d, dens_n)))

    bq = boundary_quad(mesh)
    sel_n = ~s.is_d
    load_dens = 2.0 * (ph * Dsig_nn - sig_t * dph)
    load = assemble_boundary_functional(mesh, bq.tags == NEUMANN, load_dens[sel_n])
    fixed, vals = _boundary_trace_data(state, lambda pts, nrm: phi(pts))
    aux = _minimize_quadratic(mesh, q_matrix(state), load, fixed, vals)
    value = surface - aux.min_value
    if details:
        return value, aux
    return value
