"""Measurement campaigns: learning errors, error-vs-h curves, uniform-accuracy
sweeps and the training-scale comparison."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .averaging import TruncatedAveraging
from .datagen import SamplingDomains, build_dataset
from .errors import DomainError, OscillodeError, SingularityError, ValidationError
from .integrators import EULER, OneStepMethod, ReferenceSolverConfig, reference_trajectory, time_grid
from .io import atomic_write_text
from .micromacro import LearnedProvider, integrate
from .neuralnet import StructuredNetSet
from .problems import TWO_PI, OscillatoryProblem
from .training import TrainConfig, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GridSpec:
    """Evaluation grid: a tensor grid over the box ``omega`` and J+1 phases."""

    nodes: tuple = (31, 31)
    omega: tuple = ((-2.0, 2.0), (-2.0, 2.0))
    J: int = 30
    eps_list: tuple = (1e-3, 1e-2, 1e-1, 1.0)
    h_list: tuple = ()

    def __post_init__(self):
        problems = []
        if len(self.nodes) != len(self.omega) or any(n < 2 for n in self.nodes):
            problems.append("need one node count >= 2 per axis of omega")
        if self.J < 1:
            problems.append("J must be >= 1")
        for name in ("eps_list", "h_list"):
            vals = list(getattr(self, name))
            if vals != sorted(vals):
                problems.append(f"{name} must be sorted")
        if not self.eps_list:
            problems.append("eps_list must be nonempty")
        if problems:
            raise ValidationError(problems)

    def points(self) -> np.ndarray:
        axes = [np.linspace(lo, hi, n) for (lo, hi), n in zip(self.omega, self.nodes)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def phases(self) -> np.ndarray:
        return TWO_PI * np.arange(self.J + 1) / self.J


@dataclass
class ErrorTable:
    """2-D table of max-norm errors; NaN marks a cell whose run failed."""

    row_name: str
    rows: list
    col_name: str
    cols: list
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.rows), len(self.cols)):
            raise DomainError(f"table shape {self.values.shape} does not match axes")

    def to_csv(self) -> str:
        head = [f"{self.row_name}\\{self.col_name}"] + [_cell(c) for c in self.cols]
        lines = [",".join(head)]
        for r, row in zip(self.rows, self.values):
            lines.append(",".join([_cell(r)] + [("nan" if not np.isfinite(v) else repr(float(v))) for v in row]))
        return "\n".join(lines) + "\n"

    def write(self, path):
        atomic_write_text(path, self.to_csv())

    def transpose(self) -> "ErrorTable":
        return ErrorTable(self.col_name, self.cols, self.row_name, self.rows, self.values.T.copy(), dict(self.meta))

    @property
    def failures(self) -> int:
        return int(np.sum(~np.isfinite(self.values)))


def _cell(x):
    return x if isinstance(x, str) else repr(float(x))


# --- learning error --------------------------------------------------------

def learning_error_vs_eps(nets: StructuredNetSet, problem: OscillatoryProblem, grid: GridSpec, k: int = 1) -> ErrorTable:
    """Per eps: max |F_theta(y,0,eps) - F^[k](y)| over the y-grid and
    max |phi_theta,+(tau,y,eps) - phi^[k]_tau(y)| over the (y, tau) grid."""
    if nets.mode != "classical":
        raise DomainError("learning errors need classical nets")
    Y = grid.points()
    taus = grid.phases()
    TT = np.repeat(taus, len(Y))
    YY = np.tile(Y, (len(taus), 1))
    vals = np.empty((len(grid.eps_list), 2))
    singular = {}
    for i, eps in enumerate(grid.eps_list):
        tr = TruncatedAveraging(k, problem, eps)
        Fk, bad = _F_where_defined(tr, Y)
        if bad:
            singular[repr(eps)] = bad
        dF = nets.F(Y, 0.0, eps) - Fk
        dphi = nets.phi("+", TT, YY, eps) - tr.phi(TT, YY)
        vals[i] = np.nanmax(np.linalg.norm(dF, axis=1)), np.max(np.linalg.norm(dphi, axis=1))
    return ErrorTable("eps", list(grid.eps_list), "quantity", ["F_error", "phi_error"], vals,
                      {"problem": problem.name, "k": k, "singular_points": singular})


def _F_where_defined(tr: TruncatedAveraging, Y):
    """F^[k] on the grid; points where d<phi>/dy is singular become NaN
    (e.g. the pendulum at eps=1 on the line y1=0)."""
    try:
        return tr.F(Y), 0
    except SingularityError:
        out = np.full_like(Y, np.nan)
        for j, y in enumerate(Y):
            try:
                out[j] = tr.F(y)
            except SingularityError:
                pass
        return out, int(np.sum(np.isnan(out[:, 0])))


# --- reference cache -------------------------------------------------------

class ReferenceCache:
    """Reference trajectories keyed by a content hash of everything that
    determines them. Kept in memory and, when a directory is given (or
    OSCILLODE_CACHE_DIR is set), on disk as .npy files."""

    def __init__(self, directory: str | None = None):
        self.directory = directory if directory is not None else os.environ.get("OSCILLODE_CACHE_DIR")
        self._mem = {}
        self.hits = 0
        self.misses = 0

    @staticmethod
    def key(problem, eps, y0, times, cfg, form) -> str:
        h = hashlib.sha256()
        h.update(json.dumps([problem.name, form, repr(float(eps)), [repr(float(x)) for x in y0],
                             [cfg.rtol, cfg.atol, cfg.max_step_fraction, cfg.min_step]]).encode())
        h.update(np.ascontiguousarray(times, dtype=float).tobytes())
        return h.hexdigest()

    def get(self, problem, eps, y0, times, cfg: ReferenceSolverConfig, form="classical") -> np.ndarray:
        k = self.key(problem, eps, y0, times, cfg, form)
        if k in self._mem:
            self.hits += 1
            return self._mem[k]
        path = os.path.join(self.directory, k + ".npy") if self.directory else None
        if path and os.path.exists(path):
            self.hits += 1
            ref = np.load(path)
        else:
            self.misses += 1
            ref = reference_trajectory(problem, eps, np.asarray(y0, dtype=float), times, cfg, form)
            if path:
                os.makedirs(self.directory, exist_ok=True)
                tmp = path + ".tmp.npy"
                np.save(tmp, ref)
                os.replace(tmp, path)
        self._mem[k] = ref
        return ref


_DEFAULT_CACHE = ReferenceCache()


def _union_times(T, h_list):
    grids = {h: time_grid(T, h) for h in h_list}
    union = np.unique(np.concatenate(list(grids.values())))
    return grids, union


def _lookup(union, ts):
    idx = np.searchsorted(union, ts)
    if not np.array_equal(union[idx], ts):
        raise DomainError("evaluation times not found in the reference grid")
    return idx


def _sweep(source, problem, scheme, y0, T, h_list, eps_list, method, cfg, cache, **kw):
    if not list(h_list) or not list(eps_list):
        raise ValidationError(["h list and eps list must be nonempty"])
    cfg = cfg or ReferenceSolverConfig()
    cache = cache or _DEFAULT_CACHE
    y0 = np.asarray(y0, dtype=float)
    form = "autonomous" if scheme == "auto-alt" else "classical"
    grids, union = _union_times(T, h_list)
    vals = np.full((len(h_list), len(eps_list)), np.nan)
    failures = []
    for j, eps in enumerate(eps_list):
        try:
            ref = cache.get(problem, eps, y0, union, cfg, form)
        except OscillodeError as exc:
            failures.append({"eps": eps, "h": None, "error": str(exc)})
            continue
        for i, h in enumerate(h_list):
            try:
                traj = integrate(scheme, source, problem, y0, T, h, eps, method, **kw)
                err = np.linalg.norm(traj.states - ref[_lookup(union, grids[h])], axis=1)
                vals[i, j] = float(np.max(err))
            except OscillodeError as exc:
                log.warning("cell h=%g eps=%g failed: %s", h, eps, exc)
                failures.append({"eps": eps, "h": h, "error": str(exc)})
    meta = {"scheme": scheme, "method": method.kind, "problem": problem.name, "T": T,
            "y0": y0.tolist(), "failures": failures}
    return vals, meta


def global_error_curve(source, problem, scheme, y0, T, h_list, eps_list, method: OneStepMethod = EULER,
                       cfg=None, cache=None, **kw) -> ErrorTable:
    """Rows h, columns eps: max over n of |y_n - reference(t_n)|."""
    vals, meta = _sweep(source, problem, scheme, y0, T, h_list, eps_list, method, cfg, cache, **kw)
    return ErrorTable("h", list(h_list), "eps", list(eps_list), vals, meta)


def ua_sweep(source, problem, scheme, y0, T, h_list, eps_list, method: OneStepMethod = EULER,
             cfg=None, cache=None, **kw) -> ErrorTable:
    """Same numbers as global_error_curve, eps-major (rows eps, columns h)."""
    return global_error_curve(source, problem, scheme, y0, T, h_list, eps_list, method, cfg, cache, **kw).transpose()


def convergence_slope(hs, errs) -> float:
    """Least-squares slope of log(err) against log(h)."""
    hs, errs = np.asarray(hs, dtype=float), np.asarray(errs, dtype=float)
    ok = np.isfinite(errs) & (errs > 0)
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(hs[ok]), np.log(errs[ok]), 1)[0])


def ua_spread(table: ErrorTable) -> np.ndarray:
    """Per fixed h (column of an eps-major table): max/min error over eps."""
    v = table.values
    return np.nanmax(v, axis=0) / np.nanmin(v, axis=0)


# --- training scale ---------------------------------------------------------

@dataclass
class ScaleArm:
    K: int
    hidden: tuple
    train: TrainConfig
    label: str = ""


COARSE_ARM = ScaleArm(K=800, hidden=(25,), train=TrainConfig(), label="coarse")


def training_scale_study(problem, arms, domains: SamplingDomains, y0, T, h_list, eps_list,
                         method: OneStepMethod = EULER, cfg=None, cache=None, train_fraction=0.8):
    """Train once per arm, then run a micro-macro UA sweep on each checkpoint.

    Returns (tables, summary); summary counts the cells where the second arm
    is at least as accurate as the first.
    """
    if len(arms) != 2:
        raise DomainError("the study compares exactly two arms")
    cfg = cfg or ReferenceSolverConfig()
    tables = []
    for arm in arms:
        ds = build_dataset(problem, domains, arm.K, cfg, train_fraction=train_fraction)
        nets = StructuredNetSet.create("classical", problem, hidden=arm.hidden, seed=arm.train.seed)
        nets, report = train(nets, ds, arm.train)
        t = ua_sweep(LearnedProvider(nets), problem, "micromacro", y0, T, h_list, eps_list, method, cfg, cache)
        t.meta.update(arm=arm.label, K=arm.K, hidden=list(arm.hidden), final_loss_train=report.loss_train[-1],
                      final_loss_test=report.loss_test[-1])
        tables.append(t)
    a, b = tables[0].values, tables[1].values
    ok = np.isfinite(a) & np.isfinite(b)
    better = int(np.sum(b[ok] <= a[ok]))
    summary = {"cells": int(ok.sum()), "second_not_worse": better,
               "median_ratio": float(np.median(b[ok] / a[ok])) if ok.any() else float("nan")}
    return tables, summary


# --- charts ---------------------------------------------------------------

def write_svg(table: ErrorTable, path: str, title: str = "") -> bool:
    """Log-log line chart, one series per column. Returns False when
    matplotlib is unavailable (charts are optional)."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib not installed; skipping %s", path)
        return False
    fig, ax = plt.subplots(figsize=(5, 4))
    x = np.asarray(table.rows, dtype=float)
    for j, c in enumerate(table.cols):
        ax.loglog(x, table.values[:, j], marker="o", label=f"{table.col_name}={c}")
    ax.set_xlabel(table.row_name)
    ax.set_ylabel("max error")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=7)
    fig.tight_layout()
    tmp = path + ".tmp.svg"
    fig.savefig(tmp, format="svg")
    plt.close(fig)
    os.replace(tmp, path)
    return True
