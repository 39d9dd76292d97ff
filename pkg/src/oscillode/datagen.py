"""Training corpus: sampled (t0, y0, h, eps) with reference-integrated y1."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DomainError, FormatError, OscillodeError, ValidationError
from .integrators import ReferenceSolverConfig, _make_rhs, dopri5
from .io import atomic_write_text
from .problems import TWO_PI, OscillatoryProblem

log = logging.getLogger(__name__)

DATASET_VERSION = "v1"
MAX_FAILURE_RATE = 0.01
MAX_RESAMPLES = 10


class GenerationError(OscillodeError):
    pass


@dataclass(frozen=True)
class SamplingDomains:
    omega: tuple = ((-2.0, 2.0), (-2.0, 2.0))
    h_range: tuple = (1e-3, 1e-1)
    eps_range: tuple = (1e-3, 1.0)
    t0_range: tuple = (0.0, TWO_PI)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "omega", tuple(tuple(map(float, b)) for b in self.omega))
        for name in ("h_range", "eps_range", "t0_range"):
            object.__setattr__(self, name, tuple(map(float, getattr(self, name))))
        problems = []
        h0, h1 = self.h_range
        e0, e1 = self.eps_range
        if not 0 < h0 <= h1:
            problems.append(f"h_range must satisfy 0 < h- <= h+, got {self.h_range}")
        if not 0 < e0 <= e1 <= 1:
            problems.append(f"eps_range must satisfy 0 < eps- <= eps+ <= 1, got {self.eps_range}")
        if any(not lo < hi for lo, hi in self.omega):
            problems.append(f"omega box is degenerate: {self.omega}")
        if self.t0_range[0] > self.t0_range[1]:
            problems.append(f"t0_range reversed: {self.t0_range}")
        if problems:
            raise ValidationError(problems)

    @property
    def dim(self):
        return len(self.omega)

    def autonomous(self):
        """Same domains with t0 fixed at 0, as the autonomous method requires."""
        return SamplingDomains(self.omega, self.h_range, self.eps_range, (0.0, 0.0), self.seed)


class SampleRecord(NamedTuple):
    t0: float
    y0: np.ndarray
    h: float
    eps: float
    y1: np.ndarray


def sample_inputs(domains: SamplingDomains, rng: np.random.Generator):
    """One draw: y0 uniform on the box, t0 uniform, h and eps log-uniform."""
    lo = np.array([b[0] for b in domains.omega])
    hi = np.array([b[1] for b in domains.omega])
    y0 = lo + (hi - lo) * rng.random(domains.dim)
    u = rng.random(3)
    t0 = domains.t0_range[0] + (domains.t0_range[1] - domains.t0_range[0]) * u[0]
    lh0, lh1 = math.log(domains.h_range[0]), math.log(domains.h_range[1])
    le0, le1 = math.log(domains.eps_range[0]), math.log(domains.eps_range[1])
    h = math.exp(lh0 + (lh1 - lh0) * u[1])
    eps = math.exp(le0 + (le1 - le0) * u[2])
    # exp(log(x)) can drift by an ulp; clamp into the declared ranges
    h = min(max(h, domains.h_range[0]), domains.h_range[1])
    eps = min(max(eps, domains.eps_range[0]), domains.eps_range[1])
    return float(t0), y0, h, eps


def record_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream per record, so chunking never changes the output."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


@dataclass
class Dataset:
    problem: str
    form: str
    domains: SamplingDomains
    t0: np.ndarray
    y0: np.ndarray
    h: np.ndarray
    eps: np.ndarray
    y1: np.ndarray
    K0: int
    seed: int
    resampled: int = 0
    flagged: list = field(default_factory=list)

    @property
    def K(self):
        return len(self.t0)

    @property
    def d(self):
        return self.y0.shape[1]

    def __len__(self):
        return self.K

    def __getitem__(self, k) -> SampleRecord:
        return SampleRecord(float(self.t0[k]), self.y0[k], float(self.h[k]), float(self.eps[k]), self.y1[k])

    def subset(self, idx):
        idx = np.asarray(idx)
        return dict(t0=self.t0[idx], y0=self.y0[idx], h=self.h[idx], eps=self.eps[idx], y1=self.y1[idx])

    def split_indices(self):
        """(train, test) indices: a seeded shuffle, then the first K0 train."""
        perm = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(2**31,))).permutation(self.K)
        return perm[: self.K0], perm[self.K0:]


def _solve_chunk(problem, form, cfg, t0, y0, h, eps):
    rhs = _make_rhs(problem, eps, form)
    y1, _, failed = dopri5(rhs, t0, t0 + h, y0, cfg.max_step_fraction * eps, cfg, on_failure="mark")
    failed |= ~np.all(np.isfinite(y1), axis=1)
    return y1, failed


def build_dataset(problem: OscillatoryProblem, domains: SamplingDomains, K: int,
                  cfg: ReferenceSolverConfig | None = None, form: str = "classical",
                  train_fraction: float = 0.8, K0: int | None = None, threads: int = 1,
                  chunk: int = 2048, lipschitz: float = 5.0) -> Dataset:
    """Draw K records and integrate each one with the reference solver.

    Output is a pure function of the arguments (thread count included out).
    """
    if K < 1:
        raise DomainError("K must be positive")
    if form not in ("classical", "autonomous"):
        raise DomainError(f"unknown form {form!r}")
    if form == "autonomous":
        if problem.split is None:
            raise DomainError(f"problem {problem.name!r} has no autonomous form")
        if domains.t0_range != (0.0, 0.0):
            domains = domains.autonomous()
    if domains.dim != problem.dim:
        raise DomainError(f"omega has dimension {domains.dim}, problem has {problem.dim}")
    cfg = cfg or ReferenceSolverConfig()
    rngs = [record_rng(domains.seed, k) for k in range(K)]
    draws = [sample_inputs(domains, r) for r in rngs]
    t0 = np.array([s[0] for s in draws])
    y0 = np.array([s[1] for s in draws]).reshape(K, problem.dim)
    h = np.array([s[2] for s in draws])
    eps = np.array([s[3] for s in draws])
    y1 = np.empty_like(y0)

    def run(rows):
        return _solve_chunk(problem, form, cfg, t0[rows], y0[rows], h[rows], eps[rows])

    pending = np.arange(K)
    resampled = 0
    for attempt in range(MAX_RESAMPLES + 1):
        chunks = [pending[i:i + chunk] for i in range(0, len(pending), chunk)]
        if threads > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(run, chunks))
        else:
            results = [run(c) for c in chunks]
        failed_rows = []
        for rows, (out, failed) in zip(chunks, results):
            y1[rows] = out
            failed_rows.extend(rows[failed].tolist())
        if not failed_rows:
            break
        resampled += len(failed_rows)
        if resampled > MAX_FAILURE_RATE * K:
            raise GenerationError(
                f"{resampled} reference solves failed (> {MAX_FAILURE_RATE:.0%} of K={K}); "
                f"first failing records: {failed_rows[:5]}")
        log.warning("resampling %d records whose reference solve failed", len(failed_rows))
        for k in failed_rows:
            t0[k], y0[k], h[k], eps[k] = sample_inputs(domains, rngs[k])
        pending = np.array(sorted(failed_rows))
    else:
        raise GenerationError("records kept failing after repeated resampling")

    if K0 is None:
        K0 = int(math.floor(train_fraction * K))
    ds = Dataset(problem.name, form, domains, t0, y0, h, eps, y1, K0=K0, seed=domains.seed, resampled=resampled)
    ds.flagged = check_targets(ds, problem, lipschitz)
    if ds.flagged:
        log.warning("%d records violate the target sanity bound", len(ds.flagged))
    return ds


def field_bound(problem: OscillatoryProblem, omega, margin: float = 1.0, n: int = 41, n_tau: int = 64) -> float:
    """Sup-norm of f over the box enlarged by ``margin``, sampled on a grid."""
    axes = [np.linspace(lo - margin, hi + margin, n) for lo, hi in omega]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(omega))
    taus = np.linspace(0.0, TWO_PI, n_tau, endpoint=False)
    vals = problem.field(taus[:, None], pts[None, :, :])
    return float(np.max(np.linalg.norm(vals, axis=-1)))


def check_targets(ds: Dataset, problem: OscillatoryProblem, lipschitz: float = 5.0) -> list:
    """Indices of records with |y1 - y0| > M h exp(L h).

    For autonomous records the comparison is made in the rotating frame
    z = exp(-t A / eps) y, where the drift is bounded by the same M.
    """
    M = field_bound(problem, ds.domains.omega)
    y0, y1 = ds.y0, ds.y1
    if ds.form == "autonomous":
        E1 = problem.split.expm(-(ds.t0 + ds.h) / ds.eps)
        E0 = problem.split.expm(-ds.t0 / ds.eps)
        y1 = np.einsum("bij,bj->bi", E1, y1)
        y0 = np.einsum("bij,bj->bi", E0, y0)
    jump = np.linalg.norm(y1 - y0, axis=1)
    bound = M * ds.h * np.exp(lipschitz * ds.h)
    return np.nonzero(jump > bound)[0].tolist()


# --- file format -----------------------------------------------------------------

def _fmt(x):
    return format(float(x), ".17g")


def _range(r):
    return ":".join(_fmt(x) for x in r)


def format_dataset(ds: Dataset) -> str:
    dom = ds.domains
    header = (f"# oscillode-dataset {DATASET_VERSION} problem={ds.problem} form={ds.form} d={ds.d} "
              f"K={ds.K} K0={ds.K0} seed={ds.seed} "
              f"omega={','.join(_range(b) for b in dom.omega)} h_range={_range(dom.h_range)} "
              f"eps_range={_range(dom.eps_range)} t0_range={_range(dom.t0_range)}")
    cols = np.column_stack([ds.t0, ds.y0, ds.h, ds.eps, ds.y1])
    lines = [header]
    lines += [",".join(_fmt(x) for x in row) for row in cols]
    return "\n".join(lines) + "\n"


def write_dataset(path, ds: Dataset):
    atomic_write_text(path, format_dataset(ds))


def _parse_range(text, line):
    try:
        return tuple(float(x) for x in text.split(":"))
    except ValueError:
        raise FormatError(f"bad range {text!r}", line=line) from None


def parse_dataset(text: str) -> Dataset:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# oscillode-dataset"):
        raise FormatError("missing oscillode-dataset header", line=1)
    parts = lines[0].split()
    if len(parts) < 3 or parts[2] != DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {parts[2] if len(parts) > 2 else '?'!r}, "
                          f"expected {DATASET_VERSION}", line=1)
    meta = {}
    for tok in parts[3:]:
        if "=" not in tok:
            raise FormatError(f"bad header token {tok!r}", line=1)
        k, v = tok.split("=", 1)
        meta[k] = v
    try:
        d, K, K0, seed = int(meta["d"]), int(meta["K"]), int(meta["K0"]), int(meta["seed"])
        domains = SamplingDomains(
            omega=tuple(_parse_range(b, 1) for b in meta["omega"].split(",")),
            h_range=_parse_range(meta["h_range"], 1),
            eps_range=_parse_range(meta["eps_range"], 1),
            t0_range=_parse_range(meta["t0_range"], 1),
            seed=seed,
        )
        problem, form = meta["problem"], meta["form"]
    except KeyError as exc:
        raise FormatError(f"header misses {exc.args[0]!r}", line=1) from None
    except ValueError as exc:
        raise FormatError(f"bad header value: {exc}", line=1) from None
    rows = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != 3 + 2 * d:
            raise FormatError(f"expected {3 + 2 * d} fields, found {len(fields)}", line=i)
        try:
            rows.append([float(x) for x in fields])
        except ValueError:
            raise FormatError(f"unparsable number in {line!r}", line=i) from None
    if not rows:
        raise FormatError("no records")
    if len(rows) != K:
        raise FormatError(f"header announces K={K} records, file has {len(rows)}")
    a = np.array(rows)
    bad = np.nonzero(~np.all(np.isfinite(a), axis=1))[0]
    if len(bad):
        raise ValidationError(f"record {int(bad[0])} has non-finite values")
    return Dataset(problem, form, domains, a[:, 0], a[:, 1:1 + d], a[:, 1 + d], a[:, 2 + d], a[:, 3 + d:],
                   K0=K0, seed=seed)


def read_dataset(path) -> Dataset:
    with open(path) as fh:
        return parse_dataset(fh.read())


def dataset_io(path, direction: str, dataset: Dataset | None = None):
    if direction == "write":
        write_dataset(path, dataset)
        return None
    if direction == "read":
        return read_dataset(path)
    raise DomainError(f"direction must be 'read' or 'write', got {direction!r}")
