import numpy as np
import pytest

from conftest import pendulum_phi1
from oscillode.averaging import (
    GAUSS10, TruncatedAveraging, F_truncated, directional_derivative_fd, gauss_integral, jacobian_fd,
    micro_defect_field, phi_truncated, solve_small,
)
from oscillode.errors import DomainError, SingularityError, UnsupportedOrderError
from oscillode.integrators import MIDPOINT
from oscillode.micromacro import ExactProvider, integrate_micro_macro
from oscillode.problems import TWO_PI, eval_average_field, eval_field


def test_quadrature_rule_shape():
    assert len(GAUSS10.nodes) == 10
    assert abs(GAUSS10.weights.sum() - 2.0) < 1e-14
    assert np.all(GAUSS10.weights > 0)
    np.testing.assert_allclose(GAUSS10.nodes, -GAUSS10.nodes[::-1], atol=1e-15)


def test_gauss_integral_examples():
    assert abs(gauss_integral(lambda s: np.ones_like(s), 0.0, TWO_PI) - TWO_PI) < 1e-14
    assert abs(gauss_integral(np.sin, 0.0, TWO_PI)) < 1e-13
    assert abs(gauss_integral(lambda s: s ** 19, 0.0, 1.0) - 1 / 20) < 1e-12


@pytest.mark.parametrize("j", range(20))
def test_gauss_exact_through_degree_19(j):
    # oracle: closed form of int_0^1 s^j
    assert abs(gauss_integral(lambda s: s ** j, 0.0, 1.0) * (j + 1) - 1.0) < 1e-12


def test_gauss_panels_and_errors():
    one = gauss_integral(np.cos, 0.0, 3.0)
    four = gauss_integral(np.cos, 0.0, 3.0, panels=4)
    assert abs(four - np.sin(3.0)) < 1e-15 and abs(one - np.sin(3.0)) < 1e-13
    with pytest.raises(DomainError):
        gauss_integral(np.cos, 1.0, 0.0)


def test_jacobian_fd_examples(pendulum):
    # exact when y +- eta are representable, ulp-close otherwise
    assert np.array_equal(jacobian_fd(lambda z: z, np.array([0.5, -1.25]), eta=2.0 ** -17), np.eye(2))
    np.testing.assert_allclose(jacobian_fd(lambda z: z, np.array([0.4, -1.1])), np.eye(2), atol=1e-10)
    J = jacobian_fd(lambda z: np.stack([z[..., 0] ** 2, z[..., 1]], axis=-1), np.array([1.0, 1.0]))
    np.testing.assert_allclose(J, [[2, 0], [0, 1]], atol=1e-9)
    y = np.array([0.3, 0.1])
    analytic = [[0.0, 1.0], [np.cos(0.3) - 0.5 * np.cos(0.6), 0.0]]
    np.testing.assert_allclose(jacobian_fd(lambda z: eval_average_field(pendulum, z), y), analytic, atol=1e-8)
    with pytest.raises(DomainError):
        jacobian_fd(lambda z: z, y, eta=0.0)


def test_directional_derivative_examples(pendulum, rng):
    y, v = rng.normal(size=2), rng.normal(size=2)
    np.testing.assert_allclose(directional_derivative_fd(lambda z: z, y, v), v, atol=1e-11)
    M = rng.normal(size=(2, 2))
    np.testing.assert_allclose(directional_derivative_fd(lambda z: z @ M.T, y, v), M @ v, atol=1e-12)
    tr = TruncatedAveraging(1, pendulum, 0.1)
    y = np.array([0.5, -0.5])
    g = lambda z: tr.phi(1.0, z)
    u = pendulum.average(y)
    np.testing.assert_allclose(directional_derivative_fd(g, y, u), jacobian_fd(g, y) @ u, atol=1e-8)


def test_solve_small_matches_linalg(rng):
    A = rng.normal(size=(30, 3, 3)) + 3 * np.eye(3)
    b = rng.normal(size=(30, 3))
    np.testing.assert_allclose(solve_small(A, b), np.linalg.solve(A, b[..., None])[..., 0], atol=1e-12)
    # needs a row swap
    np.testing.assert_allclose(solve_small([[0.0, 1.0], [1.0, 0.0]], [2.0, 3.0]), [3.0, 2.0])
    with pytest.raises(SingularityError):
        solve_small([[1.0, 2.0], [2.0, 4.0]], [1.0, 1.0])


def test_phi_examples(pendulum, rng):
    y = rng.uniform(-2, 2, (7, 2))
    assert np.array_equal(phi_truncated(TruncatedAveraging(0, pendulum, 0.3), 1.3, y), y)
    tr = TruncatedAveraging(1, pendulum, 0.1)
    assert np.array_equal(tr.phi(0.0, y), y)
    y0 = np.array([0.5, -0.5])
    # tau = 2pi reduces to phase 0; just below it the full integral must vanish
    assert np.max(np.abs(tr.phi(TWO_PI, y0) - y0)) < 1e-10
    assert np.max(np.abs(tr.phi(np.nextafter(TWO_PI, 0), y0) - y0)) < 1e-10


def test_phi_matches_closed_form(pendulum, rng):
    tau = rng.uniform(0, TWO_PI, 200)
    y = rng.uniform(-2, 2, (200, 2))
    tr = TruncatedAveraging(1, pendulum, 0.2)
    np.testing.assert_allclose(tr.phi(tau, y), pendulum_phi1(tau, y, 0.2), atol=1e-13)


def test_stroboscopic_property(pendulum, vdp, rng):
    y = rng.uniform(-2, 2, (100, 2))
    for p in (pendulum, vdp):
        tr = TruncatedAveraging(1, p, 0.5)
        assert np.array_equal(tr.phi(0.0, y), y)
        assert np.max(np.abs(tr.phi(np.nextafter(TWO_PI, 0), y) - y)) < 1e-10


def test_F_examples(pendulum, vdp):
    assert np.array_equal(F_truncated(TruncatedAveraging(0, pendulum, 0.1), np.array([0.0, 1.0])), [1.0, 0.0])
    y = np.array([0.5, -0.5])
    for p in (pendulum, vdp):
        np.testing.assert_allclose(TruncatedAveraging(1, p, 0.0).F(y), p.average(y), atol=1e-10)


def test_F1_matches_dense_trapezoid(pendulum):
    """Oracle: closed-form phi^[1], analytic Jacobian of its mean, 10^4-node trapezoid average."""
    eps, y = 0.1, np.array([0.5, -0.5])
    taus = TWO_PI * np.arange(10000) / 10000
    ph = pendulum_phi1(taus, np.broadcast_to(y, (10000, 2)), eps)
    avg_f = pendulum.f(taus, ph).mean(axis=0)
    y1, y2 = y
    J = np.array([[1 + eps * np.cos(y1), 0.0], [eps * y2 * np.sin(y1), 1 - eps * np.cos(y1)]])
    oracle = np.linalg.solve(J, avg_f)
    np.testing.assert_allclose(TruncatedAveraging(1, pendulum, eps).F(y), oracle, atol=1e-6)


def test_F1_singular_where_jacobian_degenerates(pendulum):
    # det = 1 - eps^2 cos^2 y1 vanishes at eps = 1, y1 = 0
    with pytest.raises(SingularityError):
        TruncatedAveraging(1, pendulum, 1.0).F(np.array([0.0, 0.3]))


def test_F_eps_consistency(pendulum, vdp, rng):
    y = rng.uniform(-2, 2, (50, 2))
    for p in (pendulum, vdp):
        d = [np.max(np.abs(TruncatedAveraging(1, p, e).F(y) - p.average(y))) for e in (0.02, 0.01)]
        assert 1.8 < d[0] / d[1] < 2.2


def test_order_validation(pendulum):
    with pytest.raises(UnsupportedOrderError):
        TruncatedAveraging(2, pendulum, 0.1)
    with pytest.raises(DomainError):
        TruncatedAveraging(1, pendulum, 0.1, eta=-1.0)


def test_dtau_phi_matches_fd(pendulum, rng):
    tr = TruncatedAveraging(1, pendulum, 0.3)
    tau = rng.uniform(0.1, 6.0, 20)
    y = rng.uniform(-2, 2, (20, 2))
    d = 1e-6
    fd = (tr.phi(tau + d, y) - tr.phi(tau - d, y)) / (2 * d)
    np.testing.assert_allclose(tr.dtau_phi(tau, y), fd, atol=1e-8)


def test_defect_examples(pendulum, vdp):
    v = np.array([0.5, -0.5])
    tr0 = TruncatedAveraging(0, pendulum, 0.1)
    taus = TWO_PI * np.arange(256) / 256
    g = micro_defect_field(tr0, taus, np.zeros(2), v)
    assert np.max(np.abs(g.mean(axis=0))) < 1e-10
    out = tr0.defect(0.0, np.zeros(2), v)
    expected = eval_field(pendulum, 0.0, v) - eval_average_field(pendulum, v)
    np.testing.assert_allclose(out, expected, atol=1e-16)
    # hand value: at tau = 0 only the -1/4 sin(2 y1) term of the average survives
    np.testing.assert_allclose(out, [0.0, 0.25 * np.sin(1.0)], atol=1e-15)


def test_defect_order_one_scales_with_eps(pendulum, vdp):
    taus = np.linspace(0, TWO_PI, 200)
    v = np.array([0.5, -0.5])
    for p in (pendulum, vdp):
        C = [np.max(np.abs(TruncatedAveraging(1, p, e).defect(taus, np.zeros(2), v))) / e for e in (0.05, 0.025)]
        assert 0.8 < C[0] / C[1] < 1.25


def test_defect_mean_vanishes(pendulum, vdp):
    # at w = 0, <g> = <f(phi)> - d<phi>/dy F^[1] = 0 by construction of F^[1]
    taus = TWO_PI * np.arange(256) / 256
    v = np.array([0.5, 0.5])
    for p in (pendulum, vdp):
        for e in (0.3, 0.04):
            g = TruncatedAveraging(1, p, e).defect(taus, np.zeros(2), v)
            assert np.max(np.abs(g.mean(axis=0))) < 1e-9 * max(1.0, np.max(np.abs(g)))


@pytest.mark.parametrize("k,ratio", [(0, 2.0), (1, 4.0)])
def test_micro_state_growth(vdp, pendulum, k, ratio):
    # exact decomposition: |w| = O(eps^(k+1)) over t in [0, 1]
    for p in (pendulum, vdp):
        w = [np.max(np.abs(integrate_micro_macro(ExactProvider(p, order=k), p, np.array([0.5, 0.5]), 1.0,
                                                 e / 50, e, MIDPOINT).w)) for e in (0.1, 0.05)]
        assert w[0] / w[1] > 0.8 * ratio
