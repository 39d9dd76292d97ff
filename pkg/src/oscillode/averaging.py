"""Stroboscopic averaging at truncation orders 0 and 1.

Integrals use 10-point Gauss-Legendre quadrature and state derivatives use
central finite differences, as in the reference computations of the
averaging literature. Everything is vectorised over leading axes of ``y``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, SingularityError, UnsupportedOrderError
from .problems import TWO_PI, OscillatoryProblem, reduce_phase

GAUSS_POINTS = 10
# a single 10-point panel over a whole period leaves ~1e-5 errors on cubic
# trig content; the same rule on 4 equal panels brings this below 1e-15
PANELS = 4
DEFAULT_ETA = 1e-5
PIVOT_TOL = 1e-12


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray


def gauss_legendre(n: int = GAUSS_POINTS) -> QuadratureRule:
    nodes, weights = np.polynomial.legendre.leggauss(n)
    return QuadratureRule(nodes, weights)


GAUSS10 = gauss_legendre()
# composite rule on [-1, 1]: PANELS copies of the 10-point rule
_X = (np.arange(PANELS)[:, None] * 2.0 + 1.0 + GAUSS10.nodes[None, :]).ravel() / PANELS - 1.0
_W = np.tile(GAUSS10.weights, PANELS) / PANELS


def gauss_integral(g, a: float, b: float, rule: QuadratureRule = GAUSS10, panels: int = 1):
    """Gauss-Legendre approximation of the integral of g over [a, b].

    With ``panels > 1`` the rule is applied on that many equal subintervals.
    """
    if b < a:
        raise DomainError("gauss_integral needs a <= b")
    if panels < 1:
        raise DomainError("panels must be >= 1")
    width = (b - a) / panels
    total = 0.0
    for j in range(panels):
        half = 0.5 * width
        mid = a + (j + 0.5) * width
        for x, w in zip(rule.nodes, rule.weights):
            total = total + half * w * np.asarray(g(mid + half * x), dtype=float)
    return total


def jacobian_fd(g, y, eta: float = DEFAULT_ETA) -> np.ndarray:
    """Central-difference Jacobian; column j is (g(y+eta e_j) - g(y-eta e_j)) / 2eta.

    ``y`` may carry leading batch axes, the result then has shape (..., d, d).
    """
    if eta <= 0:
        raise DomainError("eta must be positive")
    y = np.asarray(y, dtype=float)
    d = y.shape[-1]
    cols = []
    for j in range(d):
        e = np.zeros(d)
        e[j] = eta
        cols.append((np.asarray(g(y + e)) - np.asarray(g(y - e))) / (2.0 * eta))
    return np.stack(cols, axis=-1)


def directional_derivative_fd(g, y, v, eta: float = DEFAULT_ETA) -> np.ndarray:
    """(g(y + eta v) - g(y - eta v)) / 2eta."""
    if eta <= 0:
        raise DomainError("eta must be positive")
    y = np.asarray(y, dtype=float)
    v = np.asarray(v, dtype=float)
    return (np.asarray(g(y + eta * v)) - np.asarray(g(y - eta * v))) / (2.0 * eta)


def solve_small(A, b, pivot_tol: float = PIVOT_TOL) -> np.ndarray:
    """Solve A x = b by Gaussian elimination with partial pivoting.

    Batched over leading axes; meant for the tiny d x d systems met here.
    """
    A = np.array(A, dtype=float)
    x = np.array(b, dtype=float)
    n = A.shape[-1]
    batch = A.shape[:-2]
    A = A.reshape((-1, n, n))
    x = x.reshape((-1, n))
    rows = np.arange(A.shape[0])
    for k in range(n):
        p = k + np.argmax(np.abs(A[:, k:, k]), axis=1)
        if np.any(np.abs(A[rows, p, k]) < pivot_tol):
            raise SingularityError("singular Jacobian in averaged-field inversion")
        # swap row k and p
        Ak, Ap = A[rows, k].copy(), A[rows, p].copy()
        A[rows, k], A[rows, p] = Ap, Ak
        xk, xp = x[rows, k].copy(), x[rows, p].copy()
        x[rows, k], x[rows, p] = xp, xk
        for i in range(k + 1, n):
            m = A[:, i, k] / A[:, k, k]
            A[:, i, k:] -= m[:, None] * A[:, k, k:]
            x[:, i] -= m * x[:, k]
    for k in range(n - 1, -1, -1):
        x[:, k] = (x[:, k] - np.einsum("bj,bj->b", A[:, k, k + 1:], x[:, k + 1:])) / A[:, k, k]
    return x.reshape(batch + (n,))


@dataclass(frozen=True)
class TruncatedAveraging:
    """phi^[k], F^[k] and the micro-macro defect field for k in {0, 1}.

    phi^[1]_tau(y) = y + eps * int_0^tau (f(s, y) - <f>(y)) ds, which is
    2pi-periodic in tau, and F^[1] = (d<phi^[1]>/dy)^-1 <f(., phi^[1](y))>.
    """

    order: int
    problem: OscillatoryProblem
    eps: float
    eta: float = DEFAULT_ETA

    def __post_init__(self):
        if self.order not in (0, 1):
            raise UnsupportedOrderError(f"truncation order {self.order} unsupported (only 0 and 1)")
        if self.eta <= 0:
            raise DomainError("eta must be positive")

    # oscillating part int_0^tau (f - <f>) ds, tau reduced, y (..., d)
    def _osc_integral(self, tau, y):
        tau = reduce_phase(np.asarray(tau, dtype=float))
        y = np.asarray(y, dtype=float)
        sig = 0.5 * tau[..., None] * (1.0 + _X)  # (..., nodes)
        fs = self.problem.field(sig, y[..., None, :])  # (..., nodes, d)
        integral = 0.5 * tau[..., None] * np.einsum("k,...kd->...d", _W, fs)
        return integral - tau[..., None] * self.problem.average(y)

    def phi(self, tau, y):
        y = np.asarray(y, dtype=float)
        if self.order == 0:
            return np.broadcast_to(y, np.broadcast_shapes(np.shape(tau) + (y.shape[-1],), y.shape)).copy()
        return y + self.eps * self._osc_integral(tau, y)

    def _outer_nodes(self):
        return np.pi * (1.0 + _X)

    def _phi_mean(self, y):
        taus = self._outer_nodes()
        ph = self.phi(taus, y[..., None, :])  # (..., nodes, d)
        return 0.5 * np.einsum("k,...kd->...d", _W, ph)

    def F(self, y):
        y = np.asarray(y, dtype=float)
        if self.order == 0:
            return self.problem.average(y)
        taus = self._outer_nodes()
        ph = self.phi(taus, y[..., None, :])
        rhs = 0.5 * np.einsum("k,...kd->...d", _W, self.problem.field(taus, ph))
        J = jacobian_fd(self._phi_mean, y, self.eta)
        return solve_small(J, rhs)

    def dtau_phi(self, tau, y):
        """Analytic phase derivative of phi^[k]."""
        y = np.asarray(y, dtype=float)
        if self.order == 0:
            return np.zeros(np.broadcast_shapes(np.shape(tau) + (y.shape[-1],), y.shape))
        return self.eps * (self.problem.f(tau, y) - self.problem.average(y))

    def dy_phi_dir(self, tau, y, v):
        """d phi^[k]_tau / dy (y) applied to v; FD only on the O(eps) part."""
        y = np.asarray(y, dtype=float)
        v = np.asarray(v, dtype=float)
        if self.order == 0:
            return np.broadcast_to(v, np.broadcast_shapes(np.shape(tau) + (y.shape[-1],), v.shape)).copy()
        osc = directional_derivative_fd(lambda z: self._osc_integral(tau, z), y, v, self.eta)
        return v + self.eps * osc

    def defect(self, tau, w, v, Fv=None):
        """Right-hand side of the micro equation.

        g = f(tau, phi(v) + w) - (1/eps) d_tau phi(v) - d_y phi(v) F(v).
        """
        v = np.asarray(v, dtype=float)
        w = np.asarray(w, dtype=float)
        if Fv is None:
            Fv = self.F(v)
        if self.order == 0:
            return self.problem.f(tau, v + w) - Fv
        # (1/eps) d_tau phi^[1] = f - <f>, kept free of the 1/eps factor
        return (self.problem.f(tau, self.phi(tau, v) + w)
                - (self.problem.f(tau, v) - self.problem.average(v))
                - self.dy_phi_dir(tau, v, Fv))


def phi_truncated(trunc: TruncatedAveraging, tau, y):
    return trunc.phi(tau, y)


def F_truncated(trunc: TruncatedAveraging, y):
    return trunc.F(y)


def micro_defect_field(trunc: TruncatedAveraging, tau, w, v):
    return trunc.defect(tau, w, v)
