"""Convex integrand pairs (f, g) defining the energy density f(grad u) + g(u).

All callables are vectorized: f takes gradients shaped (m, 2), g takes values
shaped (m,).  Pairs are immutable; the p-power pair carries a regularization
floor delta used by the nonlinear solve, and exposes a sharp (delta = 0) twin
for the derivative formulas.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, ConjugateUnavailable


@dataclass(frozen=True)
class ConvexPair:
    """Integrand pair with first and second derivatives and conjugates.

    ``m_f`` is a guaranteed lower bound for the smallest eigenvalue of
    hess_f at z = 0 (delta**(p-2) for the regularized p-power pair),
    ``k_g`` the convexity constant of g (0 when g is linear).
    """

    name: str
    f: Callable[[np.ndarray], np.ndarray]
    grad_f: Callable[[np.ndarray], np.ndarray]
    hess_f: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray]
    dg: Callable[[np.ndarray], np.ndarray]
    d2g: Callable[[np.ndarray], np.ndarray]
    m_f: float
    k_g: float
    g_linear: bool
    lam: float
    p_exponent: Optional[float] = None
    delta: float = 0.0
    f_conj: Optional[Callable[[np.ndarray], np.ndarray]] = None
    g_conj: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @property
    def is_torsion(self) -> bool:
        """True for f = |z|^2/2 with linear g (includes p = 2, delta = 0)."""
        if not self.g_linear:
            return False
        return self.name == "torsion" or (self.p_exponent == 2.0 and self.delta == 0.0)

    def sharp(self) -> "ConvexPair":
        """The same pair with the regularization removed (delta = 0)."""
        if self.delta == 0.0:
            return self
        return make_p_torsion(self.p_exponent, self.lam, delta=0.0)

    def require_f_conj(self):
        if self.f_conj is None:
            raise ConjugateUnavailable(f"pair '{self.name}' has no conjugate of f")
        return self.f_conj


@dataclass(frozen=True)
class QuadraticFormSpec:
    """Coefficients of the second-variation form: a matrix field acting on
    gradients and a scalar field acting on values, both as maps of points."""

    matrix_field: Callable[[np.ndarray], np.ndarray]   # (m, 2) -> (m, 2, 2)
    scalar_field: Callable[[np.ndarray], np.ndarray]   # (m, 2) -> (m,)


def _as_points(z):
    z = np.asarray(z, dtype=float)
    return z.reshape(-1, 2) if z.ndim == 1 else z


def make_torsion(lam=1.0) -> ConvexPair:
    """f(z) = |z|^2 / 2, g(v) = -lam * v."""
    lam = float(lam)

    def f(z):
        z = _as_points(z)
        return 0.5 * np.sum(z * z, axis=-1)

    def grad_f(z):
        return _as_points(z).copy()

    def hess_f(z):
        z = _as_points(z)
        return np.broadcast_to(np.eye(2), (len(z), 2, 2)).copy()

    def f_conj(zeta):
        zeta = _as_points(zeta)
        return 0.5 * np.sum(zeta * zeta, axis=-1)

    return ConvexPair(
        name="torsion",
        f=f, grad_f=grad_f, hess_f=hess_f,
        g=lambda v: -lam * np.asarray(v, dtype=float),
        dg=lambda v: np.full_like(np.asarray(v, dtype=float), -lam),
        d2g=lambda v: np.zeros_like(np.asarray(v, dtype=float)),
        m_f=1.0, k_g=0.0, g_linear=True, lam=lam,
        f_conj=f_conj,
    )


def make_p_torsion(p, lam=1.0, delta=0.0) -> ConvexPair:
    """f(z) = (delta^2 + |z|^2)^(p/2) / p, g(v) = -lam * v, with p >= 2.

    delta > 0 removes the degeneracy of hess_f at z = 0 for the Newton solve;
    the smallest hess_f eigenvalue at z = 0 is exactly delta^(p-2).
    """
    p = float(p)
    lam = float(lam)
    delta = float(delta)
    if p < 2:
        raise ConfigError(f"p must be >= 2, got {p}")
    d2 = delta * delta

    def f(z):
        z = _as_points(z)
        s = np.sum(z * z, axis=-1)
        return (d2 + s) ** (p / 2.0) / p

    def grad_f(z):
        z = _as_points(z)
        s = np.sum(z * z, axis=-1)
        return ((d2 + s) ** (p / 2.0 - 1.0))[:, None] * z

    def hess_f(z):
        z = _as_points(z)
        s = np.sum(z * z, axis=-1)
        r2 = d2 + s
        base = r2 ** (p / 2.0 - 1.0)
        H = base[:, None, None] * np.eye(2)[None, :, :]
        if p != 2.0:
            # (p-2) r2^(p/2-2) z x z written with the bounded ratio (z x z)/r2,
            # which vanishes cleanly at z = 0 when delta = 0 and p > 2
            ratio = np.divide(
                z[:, :, None] * z[:, None, :],
                r2[:, None, None],
                out=np.zeros((len(z), 2, 2)),
                where=r2[:, None, None] > 0.0,
            )
            H = H + (p - 2.0) * base[:, None, None] * ratio
        return H

    f_conj = None
    if delta == 0.0:
        q = p / (p - 1.0)

        def f_conj(zeta):
            zeta = _as_points(zeta)
            r = np.sqrt(np.sum(zeta * zeta, axis=-1))
            return r ** q / q

    return ConvexPair(
        name="p-torsion",
        f=f, grad_f=grad_f, hess_f=hess_f,
        g=lambda v: -lam * np.asarray(v, dtype=float),
        dg=lambda v: np.full_like(np.asarray(v, dtype=float), -lam),
        d2g=lambda v: np.zeros_like(np.asarray(v, dtype=float)),
        m_f=delta ** (p - 2.0) if p > 2 else 1.0,
        k_g=0.0, g_linear=True, lam=lam,
        p_exponent=p, delta=delta,
        f_conj=f_conj,
    )


def make_anisotropic(A, k=1.0, lam=1.0) -> ConvexPair:
    """f(z) = <Az, z>/2 with SPD A, g(v) = k v^2 / 2 - lam * v (k > 0: strong pair)."""
    A = np.asarray(A, dtype=float)
    A_inv = fenchel_quadratic_conjugate(A)
    k = float(k)
    lam = float(lam)
    if k < 0:
        raise ConfigError("k must be nonnegative")

    def f(z):
        z = _as_points(z)
        return 0.5 * np.einsum("mi,ij,mj->m", z, A, z)

    def grad_f(z):
        return _as_points(z) @ A.T

    def hess_f(z):
        z = _as_points(z)
        return np.broadcast_to(A, (len(z), 2, 2)).copy()

    def f_conj(zeta):
        zeta = _as_points(zeta)
        return 0.5 * np.einsum("mi,ij,mj->m", zeta, A_inv, zeta)

    g_conj = None
    if k > 0:
        def g_conj(tau):
            tau = np.asarray(tau, dtype=float)
            return (tau + lam) ** 2 / (2.0 * k)

    eigs = np.linalg.eigvalsh(A)
    return ConvexPair(
        name="anisotropic",
        f=f, grad_f=grad_f, hess_f=hess_f,
        g=lambda v: 0.5 * k * np.asarray(v, dtype=float) ** 2 - lam * np.asarray(v, dtype=float),
        dg=lambda v: k * np.asarray(v, dtype=float) - lam,
        d2g=lambda v: np.full_like(np.asarray(v, dtype=float), k),
        m_f=float(eigs[0]), k_g=k, g_linear=(k == 0.0), lam=lam,
        f_conj=f_conj, g_conj=g_conj,
    )


def fenchel_quadratic_conjugate(A):
    """Inverse of an SPD 2x2 matrix: the Hessian of the conjugate of z -> <Az,z>/2.

    Validates symmetry and positive definiteness; the conjugate of a quadratic
    form with matrix A is the quadratic form with matrix A^(-1).
    """
    A = np.asarray(A, dtype=float)
    if A.shape != (2, 2):
        raise ConfigError("expected a 2x2 matrix")
    if not np.allclose(A, A.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(A).max())):
        raise ConfigError("matrix must be symmetric")
    det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    if A[0, 0] <= 0 or det <= 0:
        raise ConfigError("matrix must be positive definite")
    return np.array([[A[1, 1], -A[0, 1]], [-A[1, 0], A[0, 0]]]) / det
