"""Independent reference values for the test suite.

Everything here is computed from closed-form radial solutions, exact scaling
laws, and one-dimensional quadrature -- never by calling the package's own
assembly or derivative routines.  Frozen regression numbers used in the
tests are asserted against these expressions in ``test_oracle_self_checks``
inside test_validation.py, and the module is runnable as a script to print
them all.

Closed forms used:

* Disk of radius R, f = |z|^2/2, g = -lam*v:  the minimizer is
  u(r) = lam (R^2 - r^2)/4, J = pi lam^2 R^4 / 16, max u = lam R^2/4,
  boundary normal derivative -lam R / 2.
* Dilation V(x) = x maps the disk of radius R to radius (1+eps) R, so
  J(eps) = (1+eps)^4 J exactly and all eps-derivatives follow.
* Spin V(x) = (-x2, x1): x + eps V = sqrt(1+eps^2) * (rotation), hence
  J(eps) = (1+eps^2)^2 J, J' = 0 and J'' = 4 J.
* p-power pair f = |z|^p/p on the disk: |u'(r)|^{p-2} u'(r) = -lam r/2
  gives u'(r) = -(lam r/2)^{1/(p-1)}; values of J by radial quadrature.
  Dilation with lam fixed scales J by t^{2 + p/(p-1)}.
* Annulus R_i < r < R_o with u = 0 on both circles:
  u = -lam r^2/4 + a ln r + b with the two constants from the boundary
  conditions; J = (lam/2) * integral of u (linear-g energy identity).
"""

from math import factorial, log, pi, sqrt

import numpy as np
from scipy.integrate import quad


# -- polygon / triangle helpers ---------------------------------------------


def polygon_area(vertices):
    """Shoelace area of a closed polygon given as an (n, 2) array."""
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def reference_triangle_monomial(a, b):
    """Integral of x^a y^b over the triangle {x,y >= 0, x+y <= 1}."""
    return factorial(a) * factorial(b) / factorial(a + b + 2)


# -- torsion on the disk -----------------------------------------------------


def disk_torsion_value(R=1.0, lam=1.0):
    return pi * lam**2 * R**4 / 16.0


def disk_torsion_solution(r, R=1.0, lam=1.0):
    return lam * (R**2 - np.asarray(r, dtype=float) ** 2) / 4.0


def disk_torsion_max(R=1.0, lam=1.0):
    return lam * R**2 / 4.0


def disk_torsion_normal_derivative(R=1.0, lam=1.0):
    return -lam * R / 2.0


def disk_dilation_first(R=1.0, lam=1.0):
    """d/deps J((1+eps) disk) at 0 for V(x) = x."""
    return 4.0 * disk_torsion_value(R, lam)


def disk_dilation_second(R=1.0, lam=1.0):
    """d^2/deps^2 J((1+eps) disk) at 0 for V(x) = x."""
    return 12.0 * disk_torsion_value(R, lam)


def disk_spin_second(R=1.0, lam=1.0):
    """J'' along V = (-x2, x1): J(eps) = (1+eps^2)^2 J gives 4 J."""
    return 4.0 * disk_torsion_value(R, lam)


def dilation_j_of_eps(eps, R=1.0, lam=1.0):
    return (1.0 + eps) ** 4 * disk_torsion_value(R, lam)


def dilation_one_sided_quotient(eps, R=1.0, lam=1.0):
    """r_eps = 2 (J(eps) - J - eps J') / eps^2 = J (12 + 8 eps + 2 eps^2)."""
    return disk_torsion_value(R, lam) * (12.0 + 8.0 * eps + 2.0 * eps**2)


def dilation_central_second_quotient(eps, R=1.0, lam=1.0):
    """(J(eps) + J(-eps) - 2J)/eps^2 = J (12 + 2 eps^2)."""
    return disk_torsion_value(R, lam) * (12.0 + 2.0 * eps**2)


def dilation_one_sided_slope(R=1.0, lam=1.0):
    """d r_eps / d eps at 0: 8 J (pi/2 on the unit disk with lam = 1)."""
    return 8.0 * disk_torsion_value(R, lam)


# -- p-power pair on the disk ------------------------------------------------


def disk_p_torsion_solution(r, p, R=1.0, lam=1.0):
    pp = p / (p - 1.0)
    c = (lam / 2.0) ** (1.0 / (p - 1.0))
    return c * ((p - 1.0) / p) * (R**pp - np.asarray(r, dtype=float) ** pp)


def disk_p_torsion_max(p, R=1.0, lam=1.0):
    return float(disk_p_torsion_solution(0.0, p, R, lam))


def disk_p_torsion_value(p, R=1.0, lam=1.0):
    """J = lam (1 - 1/p) * integral of u (energy identity for g = -lam v)."""
    val, err = quad(
        lambda r: 2.0 * pi * r * disk_p_torsion_solution(r, p, R, lam), 0.0, R
    )
    assert err < 1e-8
    return lam * (1.0 - 1.0 / p) * val


def disk_p_torsion_value_closed_form_p3(R=1.0, lam=1.0):
    """For p = 3, lam = 1, R = 1 the radial integral evaluates to 2 pi sqrt2/21."""
    assert R == 1.0 and lam == 1.0
    return 2.0 * pi * sqrt(2.0) / 21.0


def disk_p_dilation_exponent(p):
    """J(t * disk) = t^s J with s = 2 + p/(p-1) (lam held fixed)."""
    return 2.0 + p / (p - 1.0)


def disk_p_dilation_first(p, R=1.0, lam=1.0):
    s = disk_p_dilation_exponent(p)
    return s * disk_p_torsion_value(p, R, lam)


def disk_p_dilation_second(p, R=1.0, lam=1.0):
    s = disk_p_dilation_exponent(p)
    return s * (s - 1.0) * disk_p_torsion_value(p, R, lam)


# -- torsion on the annulus --------------------------------------------------


def annulus_torsion_solution(r, r_inner, r_outer, lam=1.0):
    a = lam * (r_outer**2 - r_inner**2) / (4.0 * log(r_outer / r_inner))
    b = lam * r_inner**2 / 4.0 - a * log(r_inner)
    r = np.asarray(r, dtype=float)
    return -lam * r**2 / 4.0 + a * np.log(r) + b


def annulus_torsion_value(r_inner, r_outer, lam=1.0):
    val, err = quad(
        lambda r: 2.0 * pi * r * annulus_torsion_solution(r, r_inner, r_outer, lam),
        r_inner, r_outer,
    )
    assert err < 1e-8
    return lam / 2.0 * val


# -- hand-evaluated pointwise values ----------------------------------------

# <C_D, n> for the unit-disk torsion state with V(x) = x at lam = 1:
# <V, grad u> <(hess u) V, n> + (<sigma, grad u> - f) <(div V I - DV) V, n>
#  = (-1/2)(-1/2) + (1/8)(1) = 3/8 at every boundary point.
DISK_CD_DOT_N = 0.375

# B for the same state at interior points: (hess u) x - (I - 2 I) sigma
#  = -(lam/2) x + grad u = -lam x.
def disk_B_field(x, lam=1.0):
    return -lam * np.asarray(x, dtype=float)


if __name__ == "__main__":
    print("disk torsion J          :", disk_torsion_value())
    print("dilation J', J''        :", disk_dilation_first(), disk_dilation_second())
    print("spin J''                :", disk_spin_second())
    print("one-sided r_eps(0.1)    :", dilation_one_sided_quotient(0.1))
    print("central quotient(0.1)   :", dilation_central_second_quotient(0.1))
    print("one-sided slope         :", dilation_one_sided_slope())
    print("p=3 J (quad)            :", disk_p_torsion_value(3.0))
    print("p=3 J (closed form)     :", disk_p_torsion_value_closed_form_p3())
    print("p=3 max u               :", disk_p_torsion_max(3.0))
    print("p=3 dilation J', J''    :", disk_p_dilation_first(3.0),
          disk_p_dilation_second(3.0))
    print("annulus J (0.5, 1)      :", annulus_torsion_value(0.5, 1.0))
    print("monomial int x^2 y^2    :", reference_triangle_monomial(2, 2))
