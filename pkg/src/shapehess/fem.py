"""Quadratic Lagrange finite elements on triangles.

Provides quadrature rules, the P2 degree-of-freedom map, vectorized assembly
of energies / residuals / SPD bilinear forms, constrained sparse solves,
boundary-edge quadrature with outward normals and discrete curvature, and
gradient recovery by global L2 projection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree

from .errors import ConfigError, DegenerateForm, SolverBreakdown
from .integrands import QuadraticFormSpec
from .mesh import DIRICHLET, Mesh2D, NEUMANN

# -- quadrature ------------------------------------------------------------

_SQ35 = math.sqrt(0.6)

# Gauss-Legendre on [0, 1], exact through degree 5
EDGE_POINTS = np.array([0.5 * (1.0 - _SQ35), 0.5, 0.5 * (1.0 + _SQ35)])
EDGE_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 18.0


def _perm3(a):
    c = 1.0 - 2.0 * a
    return [(c, a, a), (a, c, a), (a, a, c)]


def _perm6(a, b):
    c = 1.0 - a - b
    return [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]


def _tri_rules():
    rules = {}
    # degree 2: edge midpoints
    pts = [(0.5, 0.5, 0.0), (0.0, 0.5, 0.5), (0.5, 0.0, 0.5)]
    rules[2] = (np.array(pts), np.full(3, 1.0 / 6.0))
    # degree 4: two 3-orbits
    a1, w1 = 0.44594849091596488, 0.22338158967801146
    a2, w2 = 0.09157621350977074, 0.10995174365532187
    pts = _perm3(a1) + _perm3(a2)
    wts = [w1] * 3 + [w2] * 3
    rules[4] = (np.array(pts), 0.5 * np.array(wts))
    # degree 6: two 3-orbits and one 6-orbit
    b1, v1 = 0.24928674517091042, 0.11678627572637936
    b2, v2 = 0.06308901449150223, 0.05084490637020681
    b3, c3, v3 = 0.31035245103378440, 0.05314504984481695, 0.08285107561837358
    pts = _perm3(b1) + _perm3(b2) + _perm6(b3, c3)
    wts = [v1] * 3 + [v2] * 3 + [v3] * 6
    rules[6] = (np.array(pts), 0.5 * np.array(wts))
    return rules


_TRI_RULES = _tri_rules()


def quadrature_rule(order):
    """Symmetric triangle rule exact through the given polynomial degree.

    Returns a list of (barycentric point, weight) pairs; weights sum to the
    reference-triangle area 1/2.  Supported orders: 2, 4, 6.
    """
    if order not in _TRI_RULES:
        raise ConfigError(f"unsupported quadrature order {order}; choose 2, 4 or 6")
    pts, wts = _TRI_RULES[order]
    return [(pts[i].copy(), float(wts[i])) for i in range(len(wts))]


# -- P2 basis ---------------------------------------------------------------


def p2_values(bary):
    """Shape functions at barycentric points (m, 3) -> (m, 6).

    Local ordering: three vertices, then midpoints of edges (0,1), (1,2), (2,0).
    """
    l1, l2, l3 = bary[:, 0], bary[:, 1], bary[:, 2]
    return np.stack(
        [
            l1 * (2 * l1 - 1),
            l2 * (2 * l2 - 1),
            l3 * (2 * l3 - 1),
            4 * l1 * l2,
            4 * l2 * l3,
            4 * l3 * l1,
        ],
        axis=1,
    )


def p2_ref_grads(bary):
    """Reference gradients d N / d(xi, eta) at barycentric points: (m, 6, 2)."""
    l1, l2, l3 = bary[:, 0], bary[:, 1], bary[:, 2]
    z = np.zeros_like(l1)
    gx = np.stack(
        [-(4 * l1 - 1), 4 * l2 - 1, z, 4 * (l1 - l2), 4 * l3, -4 * l3], axis=1
    )
    gy = np.stack(
        [-(4 * l1 - 1), z, 4 * l3 - 1, -4 * l2, 4 * l2, 4 * (l1 - l3)], axis=1
    )
    return np.stack([gx, gy], axis=2)


# -- mesh-attached structures ----------------------------------------------


class DofMap:
    """P2 dof layout: vertex dofs first, one midpoint dof per edge after."""

    def __init__(self, mesh: Mesh2D):
        self.mesh = mesh
        nv = mesh.n_vertices
        self.n_dofs = nv + mesh.n_edges
        self.element_dofs = np.concatenate(
            [mesh.triangles, nv + mesh.tri_edges], axis=1
        )
        self.dof_points = np.concatenate([mesh.vertices, mesh.midpoints], axis=0)

        b_vert = mesh.boundary_vertex_set()
        b_mid = nv + mesh.boundary_edge_index
        self.boundary_dofs = np.sort(np.concatenate([b_vert, b_mid]))

        d_sel = mesh.boundary_tags == DIRICHLET
        d_vert = np.unique(mesh.boundary_edges[d_sel].ravel())
        d_mid = nv + mesh.boundary_edge_index[d_sel]
        self.dirichlet_dofs = np.sort(np.concatenate([d_vert, d_mid]))

        free = np.ones(self.n_dofs, dtype=bool)
        free[self.dirichlet_dofs] = False
        self.free_mask = free
        self.free_dofs = np.nonzero(free)[0]


def dofmap(mesh: Mesh2D) -> DofMap:
    if "dofmap" not in mesh._cache:
        mesh._cache["dofmap"] = DofMap(mesh)
    return mesh._cache["dofmap"]


class _Geometry:
    def __init__(self, mesh: Mesh2D):
        p = mesh.vertices[mesh.triangles]
        J = np.empty((len(p), 2, 2))
        J[:, :, 0] = p[:, 1] - p[:, 0]
        J[:, :, 1] = p[:, 2] - p[:, 0]
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        inv = np.empty_like(J)
        inv[:, 0, 0] = J[:, 1, 1]
        inv[:, 0, 1] = -J[:, 0, 1]
        inv[:, 1, 0] = -J[:, 1, 0]
        inv[:, 1, 1] = J[:, 0, 0]
        inv /= det[:, None, None]
        self.jac = J
        self.det = det
        self.inv_t = np.ascontiguousarray(np.transpose(inv, (0, 2, 1)))
        self.origin = p[:, 0]
        self.centroids = p.mean(axis=1)


def geometry(mesh: Mesh2D) -> _Geometry:
    if "geometry" not in mesh._cache:
        mesh._cache["geometry"] = _Geometry(mesh)
    return mesh._cache["geometry"]


class VolumeQuad:
    """Per-element quadrature data: points, weights*|detJ|, basis tables."""

    def __init__(self, mesh: Mesh2D, order: int):
        bary, wts = _TRI_RULES[order]
        geo = geometry(mesh)
        ref = bary[:, 1:]  # (xi, eta)
        self.bary = bary
        self.N = p2_values(bary)  # (nq, 6)
        refg = p2_ref_grads(bary)  # (nq, 6, 2)
        self.x = geo.origin[:, None, :] + np.einsum(
            "tij,qj->tqi", geo.jac, ref
        )  # (nt, nq, 2)
        self.wdet = wts[None, :] * geo.det[:, None]  # (nt, nq)
        self.gradN = np.einsum("tij,qaj->tqai", geo.inv_t, refg)  # (nt, nq, 6, 2)
        self.order = order


def volume_quad(mesh: Mesh2D, order=4) -> VolumeQuad:
    key = f"vq{order}"
    if key not in mesh._cache:
        if order not in _TRI_RULES:
            raise ConfigError(f"unsupported quadrature order {order}")
        mesh._cache[key] = VolumeQuad(mesh, order)
    return mesh._cache[key]


class BoundaryQuad:
    """Edge quadrature with outward normals, tangents and discrete curvature.

    Normals are oriented by checking against the adjacent triangle centroid;
    tangents t satisfy (t, n) right-handed, i.e. t traverses the boundary with
    the domain on the left.  Vertex curvature is the turning angle divided by
    the mean incident edge length, interpolated linearly to quadrature points.
    """

    def __init__(self, mesh: Mesh2D):
        v = mesh.vertices
        e = mesh.boundary_edges
        p0 = v[e[:, 0]]
        p1 = v[e[:, 1]]
        d = p1 - p0
        self.length = np.hypot(d[:, 0], d[:, 1])
        tang = d / self.length[:, None]
        nrm = np.stack([tang[:, 1], -tang[:, 0]], axis=1)
        mid = 0.5 * (p0 + p1)
        cent = geometry(mesh).centroids[mesh.boundary_tri]
        flip = np.einsum("bi,bi->b", nrm, cent - mid) > 0
        nrm[flip] *= -1.0
        self.normal = nrm
        self.tangent = np.stack([-nrm[:, 1], nrm[:, 0]], axis=1)

        s = EDGE_POINTS
        self.x = p0[:, None, :] + s[None, :, None] * d[:, None, :]  # (nb, 3, 2)
        self.w = self.length[:, None] * EDGE_WEIGHTS[None, :]  # (nb, 3)
        self.tags = mesh.boundary_tags
        self.tri = mesh.boundary_tri

        # barycentric coordinates of the quadrature points in the owner triangle
        tris = mesh.triangles[self.tri]
        bary = np.zeros((len(e), 3, 3))
        for loc in range(3):
            sel0 = tris[:, loc] == e[:, 0]
            sel1 = tris[:, loc] == e[:, 1]
            bary[sel0, :, loc] = 1.0 - s[None, :]
            bary[sel1, :, loc] = s[None, :]
        if not np.allclose(bary.sum(axis=2), 1.0):
            raise ConfigError("boundary edge endpoints not found in owner triangle")
        self.bary = bary

        # traversal-consistent kappa at each boundary vertex
        incoming = {}
        outgoing = {}
        # orient each edge along its tangent
        for b in range(len(e)):
            i, j = e[b]
            if np.dot(d[b], self.tangent[b]) < 0:
                i, j = j, i
            outgoing[i] = b
            incoming[j] = b
        kv = {}
        for vtx, b_in in incoming.items():
            b_out = outgoing[vtx]
            t_in = self.tangent[b_in]
            t_out = self.tangent[b_out]
            ang = math.atan2(
                t_in[0] * t_out[1] - t_in[1] * t_out[0], np.dot(t_in, t_out)
            )
            kv[vtx] = ang / (0.5 * (self.length[b_in] + self.length[b_out]))
        k0 = np.array([kv[i] for i in e[:, 0]])
        k1 = np.array([kv[j] for j in e[:, 1]])
        self.kappa = k0[:, None] * (1.0 - s)[None, :] + k1[:, None] * s[None, :]

        # outward normal at boundary dof points (vertex: mean of incident edges)
        dm = dofmap(mesh)
        nrm_at = np.zeros((dm.n_dofs, 2))
        cnt = np.zeros(dm.n_dofs)
        for b in range(len(e)):
            for vtx in e[b]:
                nrm_at[vtx] += nrm[b]
                cnt[vtx] += 1.0
            mid_dof = mesh.n_vertices + mesh.boundary_edge_index[b]
            nrm_at[mid_dof] = nrm[b]
            cnt[mid_dof] = 1.0
        sel = cnt > 0
        lens = np.hypot(nrm_at[sel, 0], nrm_at[sel, 1])
        nrm_at[sel] /= lens[:, None]
        self.dof_normal = nrm_at


def boundary_quad(mesh: Mesh2D) -> BoundaryQuad:
    if "bq" not in mesh._cache:
        mesh._cache["bq"] = BoundaryQuad(mesh)
    return mesh._cache["bq"]


# -- finite element functions ------------------------------------------------


class _Locator:
    def __init__(self, mesh: Mesh2D):
        self.mesh = mesh
        self.geo = geometry(mesh)
        self.tree = cKDTree(self.geo.centroids)

    def locate(self, points, tol=1e-8):
        """Containing triangle and barycentric coordinates for each point."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = len(points)
        tri = np.full(n, -1, dtype=np.int64)
        bary = np.zeros((n, 3))
        k = min(12, self.mesh.n_triangles)
        _, cand = self.tree.query(points, k=k)
        if cand.ndim == 1:
            cand = cand[:, None]
        best = np.full(n, -np.inf)
        for c in range(cand.shape[1]):
            t = cand[:, c]
            rel = points - self.geo.origin[t]
            ref = np.einsum("mji,mj->mi", self.geo.inv_t[t], rel)
            b = np.stack([1.0 - ref[:, 0] - ref[:, 1], ref[:, 0], ref[:, 1]], axis=1)
            score = b.min(axis=1)
            better = score > best
            best[better] = score[better]
            tri[better] = t[better]
            bary[better] = b[better]
        miss = best < -tol
        if np.any(miss):
            raise ConfigError(
                f"{int(miss.sum())} evaluation points fall outside the mesh"
            )
        bary = np.clip(bary, 0.0, None)
        bary /= bary.sum(axis=1, keepdims=True)
        return tri, bary


def locator(mesh: Mesh2D) -> _Locator:
    if "locator" not in mesh._cache:
        mesh._cache["locator"] = _Locator(mesh)
    return mesh._cache["locator"]


@dataclass
class FEFunction:
    """P2 finite element function (scalar or k-component vector)."""

    mesh: Mesh2D
    values: np.ndarray  # (n_dofs,) or (n_dofs, k)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    def eval_on(self, tris, bary):
        """Values at barycentric points inside given triangles."""
        dm = dofmap(self.mesh)
        N = p2_values(np.atleast_2d(bary))
        loc = self.values[dm.element_dofs[tris]]
        return np.einsum("ma,ma...->m...", N, loc)

    def grad_on(self, tris, bary):
        """Spatial gradients at barycentric points inside given triangles."""
        dm = dofmap(self.mesh)
        geo = geometry(self.mesh)
        refg = p2_ref_grads(np.atleast_2d(bary))
        g = np.einsum("mij,maj->mai", geo.inv_t[tris], refg)
        loc = self.values[dm.element_dofs[tris]]
        return np.einsum("mai,ma...->m...i", g, loc)

    def eval_at(self, points):
        tris, bary = locator(self.mesh).locate(points)
        return self.eval_on(tris, bary)

    def grad_at(self, points):
        tris, bary = locator(self.mesh).locate(points)
        return self.grad_on(tris, bary)

    def at_dofs(self):
        return self.values


def fe_interpolate(mesh: Mesh2D, fn) -> np.ndarray:
    """Nodal interpolation: evaluate a callable at all dof points."""
    return np.asarray(fn(dofmap(mesh).dof_points), dtype=float)


# -- assembly ----------------------------------------------------------------


def element_values(mesh: Mesh2D, u_values, order=4):
    """(u, grad u) of a raw dof vector at volume quadrature points."""
    vq = volume_quad(mesh, order)
    dm = dofmap(mesh)
    loc = np.asarray(u_values)[dm.element_dofs]
    u_q = np.einsum("qa,ta->tq", vq.N, loc)
    g_q = np.einsum("tqai,ta->tqi", vq.gradN, loc)
    return u_q, g_q


def assemble_energy(mesh: Mesh2D, pair, u_values, order=4) -> float:
    """Integral of f(grad u) + g(u) using the raw elementwise gradient."""
    vq = volume_quad(mesh, order)
    u_q, g_q = element_values(mesh, u_values, order)
    nt, nq = u_q.shape
    fv = pair.f(g_q.reshape(-1, 2)).reshape(nt, nq)
    gv = pair.g(u_q)
    return float(np.sum(vq.wdet * (fv + gv)))


def assemble_residual(mesh: Mesh2D, pair, u_values, order=4) -> np.ndarray:
    """Weak Euler-Lagrange residual r_i = int <grad_f(grad u), grad phi_i> + dg(u) phi_i."""
    vq = volume_quad(mesh, order)
    dm = dofmap(mesh)
    u_q, g_q = element_values(mesh, u_values, order)
    nt, nq = u_q.shape
    sig = pair.grad_f(g_q.reshape(-1, 2)).reshape(nt, nq, 2)
    gp = pair.dg(u_q)
    r_loc = np.einsum("tq,tqai,tqi->ta", vq.wdet, vq.gradN, sig)
    r_loc += np.einsum("tq,qa,tq->ta", vq.wdet, vq.N, gp)
    r = np.zeros(dm.n_dofs)
    np.add.at(r, dm.element_dofs, r_loc)
    return r


def assemble_linear_functional(mesh: Mesh2D, vec_q=None, scal_q=None, order=4):
    """l_i = int <vec, grad phi_i> + scal * phi_i from quadrature-point arrays."""
    vq = volume_quad(mesh, order)
    dm = dofmap(mesh)
    nt, nq = vq.wdet.shape
    l_loc = np.zeros((nt, 6))
    if vec_q is not None:
        l_loc += np.einsum("tq,tqai,tqi->ta", vq.wdet, vq.gradN, vec_q)
    if scal_q is not None:
        l_loc += np.einsum("tq,qa,tq->ta", vq.wdet, vq.N, scal_q)
    out = np.zeros(dm.n_dofs)
    np.add.at(out, dm.element_dofs, l_loc)
    return out


@dataclass
class SparseSpd:
    """Symmetric positive (semi)definite sparse matrix in CSR form."""

    mat: sp.csr_matrix

    @property
    def shape(self):
        return self.mat.shape

    def dot(self, x):
        return self.mat @ x

    def quad(self, x):
        return float(x @ (self.mat @ x))


def _scatter_spd(mesh: Mesh2D, loc) -> SparseSpd:
    dm = dofmap(mesh)
    loc = 0.5 * (loc + np.transpose(loc, (0, 2, 1)))  # exact symmetry
    rows = np.repeat(dm.element_dofs, 6, axis=1).ravel()
    cols = np.tile(dm.element_dofs, (1, 6)).ravel()
    M = sp.coo_matrix(
        (loc.ravel(), (rows, cols)), shape=(dm.n_dofs, dm.n_dofs)
    ).tocsr()
    return SparseSpd(M)


def assemble_spd_values(mesh: Mesh2D, A_q=None, c_q=None, order=4) -> SparseSpd:
    """Matrix of w -> int <A grad w, grad w> + c w^2 from quadrature arrays."""
    vq = volume_quad(mesh, order)
    nt, nq = vq.wdet.shape
    loc = np.zeros((nt, 6, 6))
    if A_q is not None:
        loc += np.einsum("tq,tqai,tqij,tqbj->tab", vq.wdet, vq.gradN, A_q, vq.gradN)
    if c_q is not None:
        loc += np.einsum("tq,qa,tq,qb->tab", vq.wdet, vq.N, c_q, vq.N)
    return _scatter_spd(mesh, loc)


def assemble_bilinear(mesh: Mesh2D, qspec: QuadraticFormSpec, order=4) -> SparseSpd:
    """Matrix M of the doubled second-variation form.

    <Mw, w> = 2 * int [ <A(x) grad w, grad w> + c(x) w^2 ] with A, c the
    fields of the spec; for A = I, c = 0 this is twice the standard stiffness
    matrix, so an affine w = x1 on the unit square gives <Mw, w> = 2.
    """
    vq = volume_quad(mesh, order)
    pts = vq.x.reshape(-1, 2)
    nt, nq = vq.wdet.shape
    A_q = None
    c_q = None
    if qspec.matrix_field is not None:
        A_q = np.asarray(qspec.matrix_field(pts), dtype=float).reshape(nt, nq, 2, 2)
    if qspec.scalar_field is not None:
        c_q = np.asarray(qspec.scalar_field(pts), dtype=float).reshape(nt, nq)
    spd = assemble_spd_values(mesh, A_q, c_q, order)
    return SparseSpd((2.0 * spd.mat).tocsr())


def mass_matrix(mesh: Mesh2D) -> SparseSpd:
    if "mass" not in mesh._cache:
        vq = volume_quad(mesh, 4)
        nt, nq = vq.wdet.shape
        mesh._cache["mass"] = assemble_spd_values(mesh, c_q=np.ones((nt, nq)))
    return mesh._cache["mass"]


def stiffness_matrix(mesh: Mesh2D) -> SparseSpd:
    if "stiffness" not in mesh._cache:
        vq = volume_quad(mesh, 4)
        nt, nq = vq.wdet.shape
        eye = np.broadcast_to(np.eye(2), (nt, nq, 2, 2))
        mesh._cache["stiffness"] = assemble_spd_values(mesh, A_q=eye)
    return mesh._cache["stiffness"]


def _mass_factor(mesh: Mesh2D):
    if "mass_factor" not in mesh._cache:
        mesh._cache["mass_factor"] = spla.splu(sp.csc_matrix(mass_matrix(mesh).mat))
    return mesh._cache["mass_factor"]


# -- constrained SPD solve ----------------------------------------------------


def solve_constrained(
    spd: SparseSpd, rhs, fixed_dofs, fixed_values, residual_tol=1e-10
) -> np.ndarray:
    """Solve M x = rhs with x prescribed on fixed_dofs (symmetric elimination).

    The solve is verified: the free-dof residual must satisfy
    ||M_ff x_f - b|| <= residual_tol * ||b||, otherwise SolverBreakdown.
    """
    n = spd.shape[0]
    fixed_dofs = np.asarray(fixed_dofs, dtype=np.int64)
    fixed_values = np.asarray(fixed_values, dtype=float)
    free = np.ones(n, dtype=bool)
    free[fixed_dofs] = False
    free_idx = np.nonzero(free)[0]

    x = np.zeros(n)
    x[fixed_dofs] = fixed_values
    if len(free_idx) == 0:
        return x

    M = spd.mat
    K_ff = M[free_idx][:, free_idx]
    b = np.asarray(rhs, dtype=float)[free_idx]
    if len(fixed_dofs):
        b = b - M[free_idx][:, fixed_dofs] @ fixed_values
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x
    try:
        factor = spla.splu(sp.csc_matrix(K_ff))
        x_f = factor.solve(b)
    except RuntimeError as exc:
        raise SolverBreakdown(f"sparse factorization failed: {exc}") from exc
    res = np.linalg.norm(K_ff @ x_f - b)
    if not np.isfinite(res) or res > residual_tol * bnorm:
        raise SolverBreakdown(
            f"verified residual {res:.3e} exceeds {residual_tol:.1e} * ||rhs||"
        )
    x[free_idx] = x_f
    return x


def solve_spd(mesh: Mesh2D, spd: SparseSpd, rhs, constraints=None) -> FEFunction:
    """Constrained solve returning an FEFunction.

    ``constraints`` is a (dofs, values) pair; None means unconstrained.
    """
    if constraints is None:
        fixed, vals = np.empty(0, dtype=np.int64), np.empty(0)
    else:
        fixed, vals = constraints
    x = solve_constrained(spd, rhs, fixed, vals)
    return FEFunction(mesh, x)


# -- boundary integration ------------------------------------------------------


def boundary_integral(mesh: Mesh2D, density, tags=(DIRICHLET, NEUMANN)) -> float:
    """Integrate density(x, n, t) over the selected boundary parts.

    ``density`` receives flattened quadrature points (m, 2), outward unit
    normals and unit tangents, and returns values (m,).
    """
    bq = boundary_quad(mesh)
    sel = np.isin(bq.tags, np.asarray(tags, dtype="U1"))
    if not np.any(sel):
        return 0.0
    x = bq.x[sel].reshape(-1, 2)
    nrep = np.repeat(bq.normal[sel], 3, axis=0)
    trep = np.repeat(bq.tangent[sel], 3, axis=0)
    vals = np.asarray(density(x, nrep, trep), dtype=float)
    return float(np.sum(bq.w[sel].ravel() * vals))


# -- recovery -------------------------------------------------------------------


def recover_gradient(mesh: Mesh2D, u_values) -> FEFunction:
    """Componentwise global L2 projection of the raw gradient onto P2.

    The result is a continuous vector field; differentiating it per element
    (grad_on) provides the recovered Hessian after symmetrization.
    """
    _, g_q = element_values(mesh, u_values, order=4)
    factor = _mass_factor(mesh)
    out = np.empty((dofmap(mesh).n_dofs, 2))
    for k in range(2):
        rhs = assemble_linear_functional(mesh, scal_q=g_q[:, :, k])
        out[:, k] = factor.solve(rhs)
    return FEFunction(mesh, out)


def hessian_on(grad_fe: FEFunction, tris, bary) -> np.ndarray:
    """Symmetrized Jacobian of the recovered gradient at sample points."""
    H = grad_fe.grad_on(tris, bary)  # (m, 2, 2), H[k, i, j] = d g_i / d x_j
    return 0.5 * (H + np.transpose(H, (0, 2, 1)))


# -- weak divergence check -------------------------------------------------------


def interior_test_dofs(mesh: Mesh2D) -> np.ndarray:
    """Dofs whose basis support stays one element layer away from the boundary."""
    dm = dofmap(mesh)
    b_verts = np.zeros(mesh.n_vertices, dtype=bool)
    b_verts[mesh.boundary_vertex_set()] = True
    touching = b_verts[mesh.triangles].any(axis=1)
    bad = np.zeros(dm.n_dofs, dtype=bool)
    bad[dm.element_dofs[touching].ravel()] = True
    return np.nonzero(~bad)[0]


def h1_basis_norms(mesh: Mesh2D) -> np.ndarray:
    """H1 norms of the nodal basis functions (diagonal of stiffness + mass)."""
    if "h1_diag" not in mesh._cache:
        diag = stiffness_matrix(mesh).mat.diagonal() + mass_matrix(mesh).mat.diagonal()
        mesh._cache["h1_diag"] = np.sqrt(diag)
    return mesh._cache["h1_diag"]


def weak_divergence_residual(mesh: Mesh2D, field_q, target_q, order=4) -> float:
    """max_i |int <field, grad phi_i> + target phi_i| / ||phi_i||_H1.

    Tests div(field) = target against interior basis functions.  ``field_q``
    and ``target_q`` are quadrature-point arrays (nt, nq, 2) and (nt, nq), or
    callables of points.
    """
    vq = volume_quad(mesh, order)
    nt, nq = vq.wdet.shape
    if callable(field_q):
        field_q = np.asarray(field_q(vq.x.reshape(-1, 2))).reshape(nt, nq, 2)
    if callable(target_q):
        target_q = np.asarray(target_q(vq.x.reshape(-1, 2))).reshape(nt, nq)
    elif np.isscalar(target_q):
        target_q = np.full((nt, nq), float(target_q))
    r = assemble_linear_functional(mesh, vec_q=field_q, scal_q=target_q, order=order)
    idx = interior_test_dofs(mesh)
    if len(idx) == 0:
        raise DegenerateForm("mesh too coarse: no interior basis functions")
    return float(np.max(np.abs(r[idx]) / h1_basis_norms(mesh)[idx]))


def h1_norm(mesh: Mesh2D, values) -> float:
    """Full H1 norm of a P2 function given by its dof vector."""
    u_q, g_q = element_values(mesh, values, order=4)
    vq = volume_quad(mesh, 4)
    dens = np.sum(g_q * g_q, axis=2) + u_q * u_q
    return float(math.sqrt(np.sum(vq.wdet * dens)))
