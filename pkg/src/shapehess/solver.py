"""State solves: minimize the energy int f(grad u) + g(u) over u = 0 on the
Dirichlet part, by damped Newton with Armijo backtracking.

Convergence is measured in the H1-dual norm of the weak Euler-Lagrange
residual restricted to free dofs.  Quadratic pairs converge in one step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NoConvergence, SolverBreakdown
from .fem import (
    FEFunction,
    assemble_energy,
    assemble_residual,
    assemble_spd_values,
    boundary_quad,
    boundary_integral,
    dofmap,
    element_values,
    hessian_on,
    mass_matrix,
    recover_gradient,
    stiffness_matrix,
    volume_quad,
)
from .integrands import ConvexPair
from .mesh import DIRICHLET, Mesh2D, NEUMANN

ARMIJO_C1 = 1e-4
MIN_STEP = 2.0 ** -30


@dataclass
class NewtonReport:
    iterations: int
    residual: float
    converged: bool
    energies: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)


@dataclass
class StateSolution:
    """Discrete minimizer with recovered fields.

    ``grad_u`` is the global L2 projection of the raw gradient (continuous);
    the stress sigma and the recovered Hessian are evaluated from it.
    ``J_value`` equals minus the discrete energy of ``u``.
    """

    mesh: Mesh2D
    pair: ConvexPair
    u: FEFunction
    grad_u: FEFunction
    sigma: FEFunction
    J_value: float
    newton_report: NewtonReport

    def hess_on(self, tris, bary):
        """Recovered symmetric Hessian at barycentric sample points."""
        return hessian_on(self.grad_u, tris, bary)

    @property
    def max_grad(self) -> float:
        """max |grad u| over quadrature points: the regularity proxy."""
        if not hasattr(self, "_max_grad"):
            vq = volume_quad(self.mesh, 4)
            nt, nq = vq.wdet.shape
            bary = np.broadcast_to(vq.bary, (nt, len(vq.bary), 3)).reshape(-1, 3)
            tris = np.repeat(np.arange(nt), nq)
            g = self.grad_u.eval_on(tris, bary)
            self._max_grad = float(np.max(np.hypot(g[:, 0], g[:, 1])))
        return self._max_grad


def _h1_gram_factor(mesh: Mesh2D, free_idx):
    G = (stiffness_matrix(mesh).mat + mass_matrix(mesh).mat).tocsr()
    G_ff = G[free_idx][:, free_idx]
    return spla.splu(sp.csc_matrix(G_ff))


def h1_dual_residual(mesh: Mesh2D, pair: ConvexPair, u_values) -> float:
    """H1-dual norm of the Euler-Lagrange residual on free dofs."""
    dm = dofmap(mesh)
    r = assemble_residual(mesh, pair, u_values)[dm.free_dofs]
    gram = _h1_gram_factor(mesh, dm.free_dofs)
    z = gram.solve(r)
    return math.sqrt(max(float(r @ z), 0.0))


def _tangent_matrix(mesh, pair, u_values):
    vq = volume_quad(mesh, 4)
    u_q, g_q = element_values(mesh, u_values)
    nt, nq = u_q.shape
    H = pair.hess_f(g_q.reshape(-1, 2)).reshape(nt, nq, 2, 2)
    c = pair.d2g(u_q)
    return assemble_spd_values(mesh, A_q=H, c_q=c)


def solve_state(
    mesh: Mesh2D,
    pair: ConvexPair,
    tol: float = 1e-10,
    max_iter: int = 50,
    initial: Optional[np.ndarray] = None,
) -> StateSolution:
    """Damped Newton minimization of the energy; u = 0 on the Dirichlet part.

    The line search halves the step until the Armijo condition holds, so the
    energy decreases monotonically.  Raises NoConvergence when the iteration
    budget or the minimum step size is exhausted.
    """
    dm = dofmap(mesh)
    free = dm.free_dofs
    gram = _h1_gram_factor(mesh, free)

    if initial is not None:
        u = np.array(initial, dtype=float)
        u[dm.dirichlet_dofs] = 0.0
    elif pair.p_exponent is not None and pair.p_exponent != 2.0:
        # warm start from the quadratic (p = 2) problem
        nt = mesh.n_triangles
        nq = len(volume_quad(mesh, 4).bary)
        K = assemble_spd_values(
            mesh, A_q=np.broadcast_to(np.eye(2), (nt, nq, 2, 2))
        )
        r0 = assemble_residual(mesh, pair, np.zeros(dm.n_dofs))
        from .fem import solve_constrained

        u = solve_constrained(
            K, -r0, dm.dirichlet_dofs, np.zeros(len(dm.dirichlet_dofs))
        )
    else:
        u = np.zeros(dm.n_dofs)

    report = NewtonReport(iterations=0, residual=math.inf, converged=False)
    energy = assemble_energy(mesh, pair, u)
    report.energies.append(energy)

    for it in range(max_iter):
        r = assemble_residual(mesh, pair, u)
        r_f = r[free]
        z = gram.solve(r_f)
        dual = math.sqrt(max(float(r_f @ z), 0.0))
        report.iterations = it
        report.residual = dual
        if dual <= tol:
            report.converged = True
            break

        T = _tangent_matrix(mesh, pair, u)
        T_ff = T.mat[free][:, free]
        try:
            d_f = spla.splu(sp.csc_matrix(T_ff)).solve(-r_f)
        except RuntimeError as exc:
            raise SolverBreakdown(f"tangent factorization failed: {exc}") from exc

        slope = float(r_f @ d_f)
        if not np.isfinite(slope) or slope >= 0.0:
            raise SolverBreakdown("Newton direction is not a descent direction")

        t = 1.0
        d = np.zeros(dm.n_dofs)
        d[free] = d_f
        while True:
            trial = u + t * d
            e_trial = assemble_energy(mesh, pair, trial)
            if e_trial <= energy + ARMIJO_C1 * t * slope:
                break
            t *= 0.5
            if t < MIN_STEP:
                raise NoConvergence(
                    f"line search failed at iteration {it}, residual {dual:.3e}"
                )
        u = trial
        energy = e_trial
        report.energies.append(energy)
        report.step_sizes.append(t)
    else:
        raise NoConvergence(
            f"no convergence in {max_iter} iterations, residual {report.residual:.3e}"
        )

    grad_u = recover_gradient(mesh, u)
    sigma_vals = pair.sharp().grad_f(grad_u.values)
    return StateSolution(
        mesh=mesh,
        pair=pair,
        u=FEFunction(mesh, u),
        grad_u=grad_u,
        sigma=FEFunction(mesh, sigma_vals),
        J_value=-assemble_energy(mesh, pair, u),
        newton_report=report,
    )


@dataclass
class OptimalityReport:
    """Certificates that the solved state satisfies the optimality system."""

    el_residual: float
    duality_gap: Optional[float]
    dual_feasibility: Optional[float]
    neumann_flux: float
    max_grad: float


def optimality_diagnostics(state: StateSolution) -> OptimalityReport:
    """Euler-Lagrange residual, duality gap, and Neumann flux defect.

    The dual objective is evaluated at the recovered stress.  For linear g
    its conjugate is an indicator, so the gap compares J with int f*(sigma)
    and the constraint defect |int (div sigma + lam)| is reported separately.
    """
    mesh = state.mesh
    pair = state.pair.sharp()
    vq = volume_quad(mesh, 4)
    nt, nq = vq.wdet.shape
    bary = np.broadcast_to(vq.bary, (nt, nq, 3)).reshape(-1, 3)
    tris = np.repeat(np.arange(nt), nq)
    g = state.grad_u.eval_on(tris, bary)
    Hs = state.hess_on(tris, bary)
    w = vq.wdet.ravel()

    el = h1_dual_residual(mesh, state.pair, state.u.values)

    gap = None
    feas = None
    if pair.f_conj is not None:
        sig = pair.grad_f(g)
        fstar = float(np.sum(w * pair.f_conj(sig)))
        Hf = pair.hess_f(g)
        div_sigma = np.einsum("mij,mij->m", Hf, Hs)
        if pair.g_linear:
            gap = abs(state.J_value - fstar)
            feas = abs(float(np.sum(w * (div_sigma + pair.lam))))
        elif pair.g_conj is not None:
            dual_val = fstar + float(np.sum(w * pair.g_conj(div_sigma)))
            gap = abs(state.J_value - dual_val)

    bq = boundary_quad(mesh)
    n_sel = bq.tags == NEUMANN
    flux = 0.0
    if np.any(n_sel):
        tris_b = np.repeat(bq.tri[n_sel], 3)
        bary_b = bq.bary[n_sel].reshape(-1, 3)
        gb = state.grad_u.eval_on(tris_b, bary_b)
        sb = pair.grad_f(gb)
        nn = np.repeat(bq.normal[n_sel], 3, axis=0)
        flux = float(
            np.sum(bq.w[n_sel].ravel() * np.abs(np.einsum("mi,mi->m", sb, nn)))
        )

    return OptimalityReport(
        el_residual=el,
        duality_gap=gap,
        dual_feasibility=feas,
        neumann_flux=flux,
        max_grad=state.max_grad,
    )
