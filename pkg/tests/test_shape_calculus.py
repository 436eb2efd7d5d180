"""Shape-derivative routes: closed-form values, identities, and gates."""

import numpy as np
import pytest

from oracles import (
    disk_dilation_first,
    disk_dilation_second,
    disk_p_dilation_second,
    disk_p_torsion_value,
    disk_spin_second,
    disk_torsion_value,
)
from shapehess.errors import NonNormalDeformation, UnsupportedCombination, WrongPair
from shapehess.fem import (
    FEFunction,
    assemble_energy,
    dofmap,
    fe_interpolate,
    h1_norm,
    recover_gradient,
    solve_constrained,
)
from shapehess.integrands import make_p_torsion, make_torsion
from shapehess.mesh import (
    analytic_field,
    dilation_field,
    generate_disk,
    normal_field,
    polynomial_field,
    radial_bump_field,
    tangential_spin_field,
    translation_field,
)
from shapehess.shape_calculus import (
    DIRICHLET_PART,
    aux_boundary_problem,
    check_divA,
    check_divB,
    field_B,
    field_C,
    first_derivative_boundary,
    first_derivative_volume,
    l2_form,
    q_matrix,
    second_derivative_boundary,
    second_derivative_ptorsion,
    second_derivative_torsion,
    second_derivative_volume,
    tensor_A,
)
from shapehess.solver import NewtonReport, StateSolution, solve_state

J_EXACT = disk_torsion_value()


def scaled(V, t):
    return analytic_field(
        lambda x: t * V.value(x), lambda x: t * V.jacobian(x), f"{V.name}*{t}"
    )


def summed(V, W):
    return analytic_field(
        lambda x: V.value(x) + W.value(x),
        lambda x: V.jacobian(x) + W.jacobian(x),
        f"{V.name}+{W.name}",
    )


def exact_interpolated_state(mesh, pair, exact_fn):
    """A state whose dof values carry an exact solution instead of a solve."""
    u = fe_interpolate(mesh, exact_fn)
    grad = recover_gradient(mesh, u)
    sigma = FEFunction(mesh, pair.sharp().grad_f(grad.values))
    return StateSolution(
        mesh=mesh,
        pair=pair,
        u=FEFunction(mesh, u),
        grad_u=grad,
        sigma=sigma,
        J_value=-assemble_energy(mesh, pair, u),
        newton_report=NewtonReport(0, 0.0, True),
    )


@pytest.fixture(scope="module")
def exact_disk_state():
    mesh = generate_disk(1.0, 0.05)
    return exact_interpolated_state(
        mesh, make_torsion(1.0), lambda p: (1.0 - p[:, 0] ** 2 - p[:, 1] ** 2) / 4.0
    )


# ---------------------------------------------------------------- fields


def test_tensor_A_at_center(disk_state):
    # at a gradient zero the tensor reduces to -g(u) I = lam*u*I
    A = tensor_A(disk_state)(np.array([[0.0, 0.0]]))[0]
    target = disk_state.u.values.max() * np.eye(2)
    assert np.max(np.abs(A - target)) < 1e-8


def test_tensor_A_zero_state():
    mesh = generate_disk(1.0, 0.2)
    state = solve_state(mesh, make_torsion(0.0))
    pts = np.array([[0.0, 0.0], [0.3, 0.2], [-0.5, 0.1]])
    assert np.max(np.abs(tensor_A(state)(pts))) == 0.0


def test_divA_residual_roundoff_on_exact_state(exact_disk_state):
    assert check_divA(exact_disk_state) < 1e-12


def test_divA_residual_refines(disk_state_coarse, disk_state):
    r_coarse = check_divA(disk_state_coarse)
    r_fine = check_divA(disk_state)
    assert r_fine < 1e-2
    assert np.log2(r_coarse / r_fine) >= 0.8


def test_field_B_constant_direction(disk_state):
    # for constant V the field reduces to (hess u) c = -(lam/2) c inside
    c = np.array([0.6, -0.3])
    V = translation_field(c)
    pts = np.array([[0.0, 0.0], [0.2, 0.1], [-0.3, 0.4]])
    got = field_B(disk_state, V)(pts)
    assert np.max(np.abs(got - (-0.5) * c)) < 0.01


def test_field_B_dilation_interior(disk_state):
    pts = np.array([[0.1, 0.0], [0.0, 0.4], [-0.3, 0.3], [0.5, -0.2]])
    got = field_B(disk_state, dilation_field())(pts)
    assert np.max(np.abs(got - (-1.0) * pts)) < 0.01


def test_field_B_zero_state():
    mesh = generate_disk(1.0, 0.2)
    state = solve_state(mesh, make_torsion(0.0))
    pts = np.array([[0.0, 0.0], [0.3, 0.2]])
    assert np.max(np.abs(field_B(state, dilation_field())(pts))) == 0.0


def test_divB_roundoff_on_exact_state(exact_disk_state):
    # B = -lam*x for the disk solution and V = x; div B = -2 lam exactly
    assert check_divB(exact_disk_state, dilation_field()) < 1e-12


def test_divB_refines_on_solved_state(disk_state_coarse, disk_state):
    V = polynomial_field([(1, 1, 0.5), (0, 0, 0.2)], [(2, 0, -0.3), (0, 1, 1.0)])
    r_coarse = check_divB(disk_state_coarse, V)
    r_fine = check_divB(disk_state, V)
    assert r_fine < 1e-2
    assert np.log2(r_coarse / r_fine) >= 0.8


def test_field_C_null_cases(disk_state):
    pts = np.array([[0.8, 0.0], [0.0, 0.8]])
    nrm = pts / 0.8
    zero = scaled(dilation_field(), 0.0)
    assert np.max(np.abs(field_C(disk_state, zero, DIRICHLET_PART)(pts, nrm))) == 0.0
    state0 = solve_state(generate_disk(1.0, 0.2), make_torsion(0.0))
    got = field_C(state0, dilation_field(), DIRICHLET_PART)(pts, nrm)
    assert np.max(np.abs(got)) == 0.0


def test_field_C_interior_ring_identity(disk_state):
    # exact-field identity: with V = x and the radial solution,
    # <C_D, n> = 3 r^3 / 8 on the circle of radius r (0.375 at r = 1)
    th = np.linspace(0.0, 2.0 * np.pi, 41)[:-1]
    for r in (0.5, 0.8):
        pts = np.stack([r * np.cos(th), r * np.sin(th)], axis=1)
        got = field_C(disk_state, dilation_field(), DIRICHLET_PART)(pts, pts / r)
        assert np.max(np.abs(got - 3.0 * r**3 / 8.0)) < 1e-3


# ---------------------------------------------------------------- first order


def test_first_derivative_disk_dilation(disk_state):
    target = disk_dilation_first()
    j1v = first_derivative_volume(disk_state, dilation_field())
    j1b = first_derivative_boundary(disk_state, dilation_field())
    assert j1v == pytest.approx(target, rel=0.01)
    assert j1b == pytest.approx(target, rel=0.01)
    assert abs(j1v - j1b) <= 0.01 * abs(j1v)


def test_first_derivative_routes_shrink(disk_state, disk_state_fine):
    gap = lambda s: abs(
        first_derivative_volume(s, dilation_field())
        - first_derivative_boundary(s, dilation_field())
    )
    assert gap(disk_state_fine) < gap(disk_state)


def test_first_boundary_tangential_is_zero(disk_state):
    assert abs(first_derivative_boundary(disk_state, tangential_spin_field())) < 1e-12
    assert abs(first_derivative_volume(disk_state, tangential_spin_field())) < 1e-12


def test_first_derivative_null_directions(disk_state):
    bump = radial_bump_field(r0=0.55, amplitude=0.05)
    scale = abs(disk_state.J_value) + (0.05 + 0.4) ** 2
    assert abs(first_derivative_volume(disk_state, bump)) <= 1e-6 * scale
    assert first_derivative_boundary(disk_state, bump) == 0.0
    assert first_derivative_volume(disk_state, scaled(dilation_field(), 0.0)) == 0.0


# ---------------------------------------------------------------- second order


def test_second_volume_disk_dilation(disk_state):
    got = second_derivative_volume(disk_state, dilation_field())
    assert got == pytest.approx(disk_dilation_second(), rel=0.01)


def test_second_boundary_disk_dilation(disk_state):
    j2v = second_derivative_volume(disk_state, dilation_field())
    j2b = second_derivative_boundary(disk_state, dilation_field())
    assert j2b == pytest.approx(disk_dilation_second(), rel=0.02)
    assert abs(j2v - j2b) <= 0.02 * abs(j2v)


def test_second_route_disagreement_refines(disk_state, disk_state_fine):
    gap = lambda s: abs(
        second_derivative_volume(s, dilation_field())
        - second_derivative_boundary(s, dilation_field())
    )
    assert gap(disk_state_fine) < gap(disk_state)


def test_second_torsion_normal_field(disk_state):
    got = second_derivative_torsion(disk_state, normal_field())
    assert got == pytest.approx(disk_dilation_second(), rel=0.01)


def test_second_volume_spin(disk_state):
    got = second_derivative_volume(disk_state, tangential_spin_field())
    assert got == pytest.approx(disk_spin_second(), rel=0.01)


def test_second_torsion_tangential_coupling(disk_state):
    # purely tangential V: value comes from the coupling correction alone
    j2t = second_derivative_torsion(disk_state, tangential_spin_field())
    j2v = second_derivative_volume(disk_state, tangential_spin_field())
    assert j2t == pytest.approx(disk_spin_second(), rel=0.01)
    assert abs(j2t - j2v) <= 0.01 * abs(j2v)


def test_second_translation_nulls(disk_state):
    # volume route vanishes algebraically for constant V; the boundary
    # representation cancels only through the discrete translation
    # derivative, so its defect is small and shrinks under refinement
    V = translation_field((1.0, 0.0))
    assert abs(second_derivative_volume(disk_state, V)) == 0.0
    assert abs(second_derivative_boundary(disk_state, V)) < 0.02


def test_second_translation_boundary_defect_refines(disk_state_coarse, disk_state):
    V = translation_field((1.0, 0.0))
    d_coarse = abs(second_derivative_boundary(disk_state_coarse, V))
    d_fine = abs(second_derivative_boundary(disk_state, V))
    assert d_fine < d_coarse / 1.8


def test_second_null_directions(disk_state):
    bump = radial_bump_field(r0=0.55, amplitude=0.05)
    scale = abs(disk_state.J_value) + (0.05 + 0.4) ** 2
    assert abs(second_derivative_volume(disk_state, bump)) <= 1e-6 * scale
    assert second_derivative_boundary(disk_state, bump) == 0.0
    zero = scaled(dilation_field(), 0.0)
    assert second_derivative_volume(disk_state, zero) == 0.0
    assert second_derivative_boundary(disk_state, zero) == 0.0
    assert second_derivative_torsion(disk_state, zero) == 0.0


# ---------------------------------------------------------------- homogeneity


@pytest.mark.parametrize("t", [-1.0, 2.0, 5.0])
def test_homogeneity_in_the_field(disk_state_coarse, t):
    V = polynomial_field([(1, 0, 0.7), (0, 2, -0.4)], [(1, 1, 0.5), (0, 0, 0.3)])
    tV = scaled(V, t)
    j1 = first_derivative_volume(disk_state_coarse, V)
    assert first_derivative_volume(disk_state_coarse, tV) == pytest.approx(
        t * j1, rel=1e-8
    )
    j1b = first_derivative_boundary(disk_state_coarse, V)
    assert first_derivative_boundary(disk_state_coarse, tV) == pytest.approx(
        t * j1b, rel=1e-8
    )
    for route in (second_derivative_volume, second_derivative_boundary):
        j2 = route(disk_state_coarse, V)
        assert route(disk_state_coarse, tV) == pytest.approx(t * t * j2, rel=1e-8)


def test_homogeneity_torsion_route(disk_state_coarse):
    V = normal_field()
    j2 = second_derivative_torsion(disk_state_coarse, V)
    for t in (-1.0, 2.0, 5.0):
        got = second_derivative_torsion(disk_state_coarse, scaled(V, t))
        assert got == pytest.approx(t * t * j2, rel=1e-8)


# ---------------------------------------------------------------- locality


def test_locality_of_boundary_routes(disk_state):
    V1 = dilation_field()
    V2 = summed(V1, radial_bump_field(r0=0.7, amplitude=1.0))
    assert first_derivative_boundary(disk_state, V1) == first_derivative_boundary(
        disk_state, V2
    )
    assert second_derivative_boundary(disk_state, V1) == second_derivative_boundary(
        disk_state, V2
    )
    dj2 = abs(
        second_derivative_volume(disk_state, V1)
        - second_derivative_volume(disk_state, V2)
    )
    assert dj2 <= 1e-3


# ---------------------------------------------------------------- aux problem


def test_aux_minimizer_constant_data(disk_state):
    # constant boundary data and no load: the minimizer of the quadratic
    # form must be that constant (it lies in the form's kernel)
    dm = dofmap(disk_state.mesh)
    K = q_matrix(disk_state)
    data = np.full(len(dm.dirichlet_dofs), 0.5)
    v = solve_constrained(K, np.zeros(dm.n_dofs), dm.dirichlet_dofs, data)
    assert np.max(np.abs(v - 0.5)) < 1e-8


def test_aux_boundary_problem_dilation(disk_state):
    # data -V_n d_n(u) is 1/2 up to O(h) on the polygon; the minimizer and
    # the attained minimum stay near the constant-1/2 solution
    aux = aux_boundary_problem(disk_state, dilation_field())
    assert np.max(np.abs(aux.minimizer.values - 0.5)) < 0.02
    assert abs(aux.min_value) < 1e-2


def test_aux_minimizer_tracks_transported_gradient(disk_state_coarse, disk_state):
    # for compactly supported V the minimizer approximates <V, grad u>
    bump = radial_bump_field(r0=0.7, amplitude=1.0)
    errs = []
    for state in (disk_state_coarse, disk_state):
        _, aux = second_derivative_volume(state, bump, details=True)
        target = fe_interpolate(
            state.mesh,
            lambda p: np.einsum("mi,mi->m", bump.value(p), state.grad_u.eval_at(p)),
        )
        errs.append(
            h1_norm(state.mesh, aux.minimizer.values - target)
            / h1_norm(state.mesh, target)
        )
    assert errs[1] <= 0.05
    assert errs[1] < errs[0] / 1.8


def test_second_order_energy_minimum_is_minimal(disk_state_coarse):
    # convexity: the attained minimum undercuts random admissible fields
    V = polynomial_field([(1, 0, 1.0), (0, 1, 0.3)], [(2, 0, -0.5)])
    _, aux = second_derivative_volume(disk_state_coarse, V, details=True)
    K, load = aux.stiffness, aux.neumann_load
    dm = dofmap(disk_state_coarse.mesh)
    rng = np.random.default_rng(9)
    for _ in range(10):
        w = rng.normal(size=dm.n_dofs)
        w[dm.dirichlet_dofs] = 0.0
        assert aux.min_value <= K.quad(w) + load @ w + 1e-10


# ---------------------------------------------------------------- p-power route


def test_ptorsion_route_p3(p3_state):
    got = second_derivative_ptorsion(p3_state, normal_field())
    assert got == pytest.approx(disk_p_dilation_second(3.0), rel=0.05)


def test_ptorsion_route_p2_delegates(disk_state):
    p2 = make_p_torsion(2.0, 1.0, delta=0.0)
    state = solve_state(disk_state.mesh, p2)
    a = second_derivative_ptorsion(state, normal_field())
    b = second_derivative_torsion(state, normal_field())
    assert a == pytest.approx(b, rel=1e-8)


def test_ptorsion_route_gates(p3_state, disk_state):
    with pytest.raises(NonNormalDeformation):
        second_derivative_ptorsion(p3_state, tangential_spin_field())
    with pytest.raises(WrongPair):
        second_derivative_ptorsion(disk_state, normal_field())  # plain torsion pair
    with pytest.raises(WrongPair):
        second_derivative_torsion(p3_state, normal_field())
    mixed = solve_state(
        generate_disk(1.0, 0.2, dirichlet_fraction=0.5),
        make_p_torsion(3.0, 1.0, delta=1e-4),
    )
    with pytest.raises(UnsupportedCombination):
        second_derivative_ptorsion(mixed, normal_field())


def test_ptorsion_rho_floor_insensitive(p3_state):
    vals = [
        second_derivative_ptorsion(p3_state, normal_field(), rho_rel=r)
        for r in (1e-4, 1e-5, 1e-6)
    ]
    spread = (max(vals) - min(vals)) / abs(vals[0])
    assert spread < 0.01


# ---------------------------------------------------------------- l2 form


def test_l2_form_matches_torsion_route(disk_state):
    l2 = l2_form(disk_state, lambda x: np.ones(len(x)))
    j2t = second_derivative_torsion(disk_state, normal_field())
    assert l2 == pytest.approx(j2t, rel=0.01)
    assert l2 == pytest.approx(disk_dilation_second(), rel=0.01)


def test_l2_form_zero_and_homogeneity(disk_state):
    assert l2_form(disk_state, lambda x: np.zeros(len(x))) == 0.0
    base = l2_form(disk_state, lambda x: 1.0 + 0.3 * x[:, 0])
    twice = l2_form(disk_state, lambda x: 2.0 * (1.0 + 0.3 * x[:, 0]))
    assert twice == pytest.approx(4.0 * base, rel=1e-10)


def test_l2_form_requires_torsion(p3_state):
    with pytest.raises(WrongPair):
        l2_form(p3_state, lambda x: np.ones(len(x)))
