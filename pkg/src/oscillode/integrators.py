"""One-step schemes and the high-accuracy reference solver."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import ConvergenceError, DomainError, NumericalError, StiffnessError
from .problems import OscillatoryProblem

METHOD_ORDERS = {"forward-euler": 1, "midpoint": 2}
_ALIASES = {"euler": "forward-euler", "forward-euler": "forward-euler", "midpoint": "midpoint"}


@dataclass(frozen=True)
class OneStepMethod:
    kind: str = "forward-euler"
    tol: float = 1e-12
    max_iter: int = 100
    damping: float = 1.0

    def __post_init__(self):
        kind = _ALIASES.get(self.kind)
        if kind is None:
            raise DomainError(f"unknown method {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if self.tol <= 0 or self.max_iter < 1 or not 0 < self.damping <= 1:
            raise DomainError("invalid fixed-point settings")

    @property
    def order(self) -> int:
        return METHOD_ORDERS[self.kind]


EULER = OneStepMethod("forward-euler")
MIDPOINT = OneStepMethod("midpoint")


def fixed_point(g, x0, method: OneStepMethod):
    """Iterate x <- x + damping (g(x) - x) until the update is below tol."""
    x = x0
    res = np.inf
    for _ in range(method.max_iter):
        gx = g(x)
        x_new = x + method.damping * (gx - x)
        res = float(np.max(np.abs(x_new - x))) if np.size(x) else 0.0
        x = x_new
        if not np.isfinite(res):
            break
        if res <= method.tol * (1.0 + float(np.max(np.abs(x), initial=0.0))):
            return x
    raise ConvergenceError(f"fixed-point iteration did not converge (residual {res:.3e})", residual=res)


def step(method: OneStepMethod, field, t, h, y):
    """Advance y by one step of size h for y' = field(t, y)."""
    y = np.asarray(y, dtype=float)
    if method.kind == "forward-euler":
        return y + h * field(t, y)
    tm = t + 0.5 * h
    guess = y + h * field(t, y)
    return fixed_point(lambda z: y + h * field(tm, 0.5 * (y + z)), guess, method)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    v: np.ndarray | None = None
    w: np.ndarray | None = None
    meta: dict = dc_field(default_factory=dict)

    def __len__(self):
        return len(self.times)


def time_grid(T: float, h: float) -> np.ndarray:
    """t_n = n h up to T; the last step is shortened when T/h is not an integer."""
    if h <= 0 or T < 0:
        raise DomainError("need h > 0 and T >= 0")
    n = T / h
    N = int(round(n))
    if abs(N * h - T) <= 1e-12 * max(1.0, T):
        return np.arange(N + 1) * h if N else np.zeros(1)
    N = int(np.ceil(n))
    ts = np.arange(N + 1) * h
    ts[-1] = T
    return ts


def integrate_path(method: OneStepMethod, field, y0, T: float, h: float) -> Trajectory:
    ts = time_grid(T, h)
    ys = np.empty((len(ts),) + np.shape(y0))
    ys[0] = y0
    for n in range(len(ts) - 1):
        ys[n + 1] = step(method, field, ts[n], ts[n + 1] - ts[n], ys[n])
    return Trajectory(ts, ys, meta={"method": method.kind, "h": h})


# --- reference solver ------------------------------------------------------

@dataclass(frozen=True)
class ReferenceSolverConfig:
    rtol: float = 1e-10
    atol: float = 1e-12
    max_step_fraction: float = 0.1
    min_step: float = 1e-14

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise DomainError("tolerances must be positive")
        if not 0 < self.max_step_fraction <= 1:
            raise DomainError("max_step_fraction must lie in (0, 1]")


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = _B - np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


def dopri5(rhs, t0, t1, y0, max_step, cfg: ReferenceSolverConfig, h_init=None, on_failure="raise"):
    """Integrate a batch of independent ODEs with per-row adaptive steps.

    ``rhs(t, y, rows)`` receives t of shape (b,), y of shape (b, d) and the
    indices of the still-active rows. Returns the states at t1, the last
    accepted step sizes (for restarts) and a mask of failed rows. With
    ``on_failure='mark'`` a row whose step underflows is dropped and flagged
    instead of aborting the whole batch.
    """
    t = np.array(t0, dtype=float, copy=True)
    t1 = np.broadcast_to(np.asarray(t1, dtype=float), t.shape)
    y = np.array(y0, dtype=float, copy=True)
    max_step = np.broadcast_to(np.asarray(max_step, dtype=float), t.shape)
    hs = np.minimum(max_step, np.maximum(t1 - t, 0.0)) if h_init is None else np.minimum(h_init, max_step)
    failed = np.zeros(t.shape, dtype=bool)
    active = t1 - t > 0
    while np.any(active):
        idx = np.nonzero(active)[0]
        ta, ya = t[idx], y[idx]
        remaining = t1[idx] - ta
        last = hs[idx] >= remaining * (1 - 1e-12)
        h = np.where(last, remaining, hs[idx])
        ks = np.empty((7,) + ya.shape)
        ks[0] = rhs(ta, ya, idx)
        for s in range(1, 7):
            acc = ya + h[:, None] * np.einsum("s,sbd->bd", np.array(_A[s]), ks[:s])
            ks[s] = rhs(ta + _C[s] * h, acc, idx)
        y_new = acc  # stage 7 argument is the 5th-order solution
        err_vec = h[:, None] * np.einsum("s,sbd->bd", _E, ks)
        scale = cfg.atol + cfg.rtol * np.maximum(np.abs(ya), np.abs(y_new))
        err = np.sqrt(np.mean((err_vec / scale) ** 2, axis=1))
        if not np.all(np.isfinite(y_new)):
            err = np.where(np.all(np.isfinite(y_new), axis=1), err, np.inf)
        ok = err <= 1.0
        fac = np.where(err == 0, 5.0, np.clip(0.9 * np.power(np.maximum(err, 1e-300), -0.2), 0.2, 5.0))
        fac = np.where(ok, fac, np.minimum(fac, 1.0))
        acc_rows = idx[ok]
        t[acc_rows] = np.where(last[ok], t1[acc_rows], ta[ok] + h[ok])
        y[acc_rows] = y_new[ok]
        # keep the pre-clip step proposal when the final step was shortened
        base = np.where(last & ok, np.maximum(hs[idx], h), h)
        hs[idx] = np.minimum(base * fac, max_step[idx])
        tiny = hs[idx] < cfg.min_step
        if np.any(tiny):
            if on_failure == "raise":
                raise StiffnessError(f"step size underflow (h < {cfg.min_step:g})")
            failed[idx[tiny]] = True
        active = (t1 - t > 0) & ~failed
    y[failed] = np.nan
    return y, hs, failed


def reference_flow(problem: OscillatoryProblem, eps, t0, h, y0, cfg: ReferenceSolverConfig | None = None,
                   form: str = "classical"):
    """Accurate flow of y' = f(t/eps, y) from t0 to t0 + h.

    Scalars or batches: ``eps``, ``t0`` and ``h`` broadcast to the leading
    axis of ``y0``. ``form='autonomous'`` integrates y' = A y/eps + g(y).
    """
    cfg = cfg or ReferenceSolverConfig()
    y0 = np.asarray(y0, dtype=float)
    single = y0.ndim == 1
    Y = np.atleast_2d(y0)
    B = Y.shape[0]
    eps = np.broadcast_to(np.asarray(eps, dtype=float), (B,))
    t0 = np.broadcast_to(np.asarray(t0, dtype=float), (B,))
    h = np.broadcast_to(np.asarray(h, dtype=float), (B,))
    if np.any(eps <= 0) or np.any(eps > 1):
        raise DomainError("eps must lie in (0, 1]")
    if np.any(h <= 0):
        raise DomainError("h must be positive")
    rhs = _make_rhs(problem, eps, form)
    out, _, _ = dopri5(rhs, t0, t0 + h, Y, cfg.max_step_fraction * eps, cfg)
    if not np.all(np.isfinite(out)):
        raise NumericalError("reference flow produced non-finite values")
    return out[0] if single else out


def _make_rhs(problem, eps, form):
    if form == "classical":
        return lambda t, y, rows: problem.rhs(t, y, eps[rows])
    if form == "autonomous":
        return lambda t, y, rows: problem.autonomous_rhs(t, y, eps[rows])
    raise DomainError(f"unknown form {form!r}")


def reference_trajectory(problem: OscillatoryProblem, eps: float, y0, times, cfg: ReferenceSolverConfig | None = None,
                         form: str = "classical") -> np.ndarray:
    """Reference states at every entry of ``times`` (times[0] is the start)."""
    cfg = cfg or ReferenceSolverConfig()
    times = np.asarray(times, dtype=float)
    out = np.empty((len(times), len(y0)))
    out[0] = y0
    e = np.array([float(eps)])
    rhs = _make_rhs(problem, e, form)
    y = np.asarray(y0, dtype=float)[None, :]
    hs = None
    for n in range(len(times) - 1):
        y, hs, _ = dopri5(rhs, times[n:n + 1], times[n + 1], y, cfg.max_step_fraction * eps, cfg, h_init=hs)
        out[n + 1] = y[0]
    return out


def rk4_fixed(rhs, t0, t1, y0, n_steps: int):
    """Classical RK4 with a fixed number of steps (oracle for tests)."""
    y = np.asarray(y0, dtype=float)
    h = (t1 - t0) / n_steps
    t = t0
    for i in range(n_steps):
        k1 = rhs(t, y)
        k2 = rhs(t + h / 2, y + h / 2 * k1)
        k3 = rhs(t + h / 2, y + h / 2 * k2)
        k4 = rhs(t + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t = t0 + (i + 1) * h
    return y
