"""Inference-time integrators: slow-fast, micro-macro and the autonomous
alternative, driven by either exact truncations or trained networks."""

from __future__ import annotations

import numpy as np

from .averaging import DEFAULT_ETA, TruncatedAveraging
from .errors import DomainError, ModeError, NumericalError
from .integrators import EULER, OneStepMethod, Trajectory, step, time_grid
from .neuralnet import StructuredNetSet
from .problems import OscillatoryProblem, vdp_change_of_variables


class DecompositionProvider:
    """Answers F(y,h,eps), phi_+(tau,y,eps) and the two derivative queries
    needed by the micro equation.

    ``dtau_phi_scaled`` returns (1/eps) d_tau phi_+; every provider computes
    it without dividing by eps, so it stays finite as eps -> 0.
    """

    variant = "abstract"

    def __init__(self, problem: OscillatoryProblem):
        self.problem = problem

    def F(self, y, h, eps):
        raise NotImplementedError

    def phi(self, tau, y, eps):
        raise NotImplementedError

    def dtau_phi_scaled(self, tau, v, eps):
        raise NotImplementedError

    def dy_phi_dir(self, tau, v, u, eps):
        raise NotImplementedError

    def defect(self, tau, w, v, eps, Fv):
        """g(tau, w, v) = f(tau, phi_+(v) + w) - (1/eps) d_tau phi_+(v) - d_y phi_+(v) Fv."""
        f = self.problem.f(tau, self.phi(tau, v, eps) + w)
        return f - self.dtau_phi_scaled(tau, v, eps) - self.dy_phi_dir(tau, v, Fv, eps)


class ExactProvider(DecompositionProvider):
    """Truncated averaging phi^[k], F^[k] (k in {0, 1})."""

    def __init__(self, problem, order: int = 1, eta: float = DEFAULT_ETA):
        super().__init__(problem)
        self.order = order
        self.eta = eta
        self._cache = {}
        TruncatedAveraging(order, problem, 1.0, eta)  # validate early
        self.variant = f"exact-k{order}"

    def trunc(self, eps) -> TruncatedAveraging:
        eps = float(eps)
        tr = self._cache.get(eps)
        if tr is None:
            tr = self._cache[eps] = TruncatedAveraging(self.order, self.problem, eps, self.eta)
        return tr

    def F(self, y, h, eps):
        return self.trunc(eps).F(y)

    def phi(self, tau, y, eps):
        return self.trunc(eps).phi(tau, y)

    def dtau_phi_scaled(self, tau, v, eps):
        v = np.asarray(v, dtype=float)
        if self.order == 0:
            return np.zeros_like(v)
        return self.problem.f(tau, v) - self.problem.average(v)

    def dy_phi_dir(self, tau, v, u, eps):
        return self.trunc(eps).dy_phi_dir(tau, v, u)


class LearnedProvider(DecompositionProvider):
    """Classical-mode networks; derivatives of phi_+ by central differences
    applied only to the network difference R(cos, sin) - R(1, 0)."""

    def __init__(self, nets: StructuredNetSet, eta: float = DEFAULT_ETA):
        if nets.mode != "classical":
            raise ModeError("learned provider needs classical nets")
        super().__init__(nets.problem)
        self.nets = nets
        self.eta = eta
        self.variant = "learned"

    def F(self, y, h, eps):
        return self.nets.F(y, h, eps)

    def phi(self, tau, y, eps):
        return self.nets.phi("+", tau, y, eps)

    def _diff(self, tau, y, eps):
        return self.nets.phase_net_diff("+", tau, y, eps)

    def dtau_phi_scaled(self, tau, v, eps):
        e = self.eta
        return (self._diff(tau + e, v, eps) - self._diff(tau - e, v, eps)) / (2.0 * e)

    def dy_phi_dir(self, tau, v, u, eps):
        v = np.asarray(v, dtype=float)
        u = np.asarray(u, dtype=float)
        e = self.eta
        fd = (self._diff(tau, v + e * u, eps) - self._diff(tau, v - e * u, eps)) / (2.0 * e)
        return u + eps * fd


def as_provider(source, problem=None) -> DecompositionProvider:
    if isinstance(source, DecompositionProvider):
        return source
    if isinstance(source, StructuredNetSet):
        return LearnedProvider(source)
    if isinstance(source, TruncatedAveraging):
        return ExactProvider(source.problem, source.order, source.eta)
    raise DomainError(f"cannot build a provider from {type(source).__name__}")


def phase_derivatives(provider: DecompositionProvider, tau, v, eps):
    """(d_tau phi_+(tau, v), d_y phi_+(tau, v) . F(v, 0, eps))."""
    provider = as_provider(provider)
    Fv = provider.F(v, 0.0, eps)
    return eps * provider.dtau_phi_scaled(tau, v, eps), provider.dy_phi_dir(tau, v, Fv, eps)


def _check_inputs(y0, T, h, eps):
    if not 0 < eps <= 1:
        raise DomainError("eps must lie in (0, 1]")
    y0 = np.asarray(y0, dtype=float)
    if y0.ndim != 1 or not np.all(np.isfinite(y0)):
        raise DomainError("y0 must be a finite vector")
    time_grid(T, h)
    return y0


def integrate_slow_fast(provider, problem, y0, T, h, eps, method: OneStepMethod = EULER) -> Trajectory:
    """y_n = phi_+(t_n/eps, v_n) with v_{n+1} = Phi_h^{F(., h, eps)}(v_n), v_0 = y0."""
    provider = as_provider(provider, problem)
    y0 = _check_inputs(y0, T, h, eps)
    ts = time_grid(T, h)
    vs = np.empty((len(ts), len(y0)))
    vs[0] = y0
    for n in range(len(ts) - 1):
        hn = ts[n + 1] - ts[n]
        vs[n + 1] = step(method, lambda t, y: provider.F(y, hn, eps), ts[n], hn, vs[n])
    ys = provider.phi(ts / eps, vs, eps)
    meta = {"scheme": "slowfast", "method": method.kind, "eps": eps, "h": h, "provider": provider.variant}
    return Trajectory(ts, ys, v=vs, meta=meta)


def integrate_micro_macro(provider, problem, y0, T, h, eps, method: OneStepMethod = EULER,
                          v_coupling: str = "average", force_w_zero: bool = False) -> Trajectory:
    """Macro chain as in the slow-fast scheme plus the micro correction w.

    The w-step integrates g(t/eps, w, v) with F(v, 0, eps) inside g. For the
    midpoint rule ``v_coupling='average'`` evaluates the defect at
    (v_n + v_{n+1})/2, i.e. the midpoint rule applied to the full (v, w)
    system; ``'frozen'`` keeps v_n over the step, which limits the scheme to
    first order. Forward Euler uses v_n either way.
    """
    if v_coupling not in ("average", "frozen"):
        raise DomainError(f"v_coupling must be 'average' or 'frozen', got {v_coupling!r}")
    provider = as_provider(provider, problem)
    y0 = _check_inputs(y0, T, h, eps)
    ts = time_grid(T, h)
    d = len(y0)
    vs = np.empty((len(ts), d))
    ws = np.zeros((len(ts), d))
    vs[0] = y0
    for n in range(len(ts) - 1):
        t, hn = ts[n], ts[n + 1] - ts[n]
        v = vs[n]
        vs[n + 1] = step(method, lambda s, y: provider.F(y, hn, eps), t, hn, v)
        if force_w_zero:
            continue
        vv = v if (method.kind == "forward-euler" or v_coupling == "frozen") else 0.5 * (v + vs[n + 1])
        Fv = provider.F(vv, 0.0, eps)
        ws[n + 1] = step(method, lambda s, w: provider.defect(s / eps, w, vv, eps, Fv), t, hn, ws[n])
        if not np.all(np.isfinite(ws[n + 1])):
            raise NumericalError(f"micro state became non-finite at step n={n}")
    ys = provider.phi(ts / eps, vs, eps) + ws
    meta = {"scheme": "micromacro", "method": method.kind, "eps": eps, "h": h,
            "provider": provider.variant, "v_coupling": v_coupling}
    return Trajectory(ts, ys, v=vs, w=ws, meta=meta)


def integrate_autonomous_alt(nets: StructuredNetSet, problem, y0, T, h, eps) -> Trajectory:
    """y_n = phase(t_n/eps, flow^n(y0)) with the learned flow and phase maps."""
    if nets.mode != "autonomous":
        raise ModeError("the alternative method needs autonomous-mode nets")
    if problem is not None and problem.split is None:
        raise DomainError(f"problem {problem.name!r} has no autonomous form")
    y0 = _check_inputs(y0, T, h, eps)
    ts = time_grid(T, h)
    vs = np.empty((len(ts), len(y0)))
    vs[0] = y0
    for n in range(len(ts) - 1):
        vs[n + 1] = nets.flow(vs[n], ts[n + 1] - ts[n], eps)
    ys = nets.phi("+", ts / eps, vs, eps)
    meta = {"scheme": "auto-alt", "eps": eps, "h": h, "provider": "learned"}
    return Trajectory(ts, ys, v=vs, meta=meta)


def to_original_variables(traj: Trajectory, eps) -> Trajectory:
    """Van der Pol: map a transformed-variable trajectory back to (q, p)."""
    ys = vdp_change_of_variables("inverse", traj.times, eps, traj.states)
    return Trajectory(traj.times, ys, v=traj.v, w=traj.w, meta=dict(traj.meta, variables="original"))


SCHEMES = ("slowfast", "micromacro", "auto-alt")


def integrate(scheme, source, problem, y0, T, h, eps, method: OneStepMethod = EULER, **kw) -> Trajectory:
    if scheme == "slowfast":
        return integrate_slow_fast(source, problem, y0, T, h, eps, method)
    if scheme == "micromacro":
        return integrate_micro_macro(source, problem, y0, T, h, eps, method, **kw)
    if scheme == "auto-alt":
        return integrate_autonomous_alt(source, problem, y0, T, h, eps)
    raise DomainError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
