import numpy as np
import pytest

from conftest import pendulum_phi1
from oscillode.datagen import SamplingDomains
from oscillode.errors import DomainError, NumericalError, ValidationError
from oscillode.experiments import (
    COARSE_ARM, ErrorTable, GridSpec, ReferenceCache, ScaleArm, convergence_slope, global_error_curve,
    learning_error_vs_eps, training_scale_study, ua_spread, ua_sweep, write_svg,
)
from oscillode.integrators import EULER, ReferenceSolverConfig
from oscillode.micromacro import ExactProvider, integrate
from oscillode.neuralnet import StructuredNetSet
from oscillode.training import TrainConfig

Y0 = np.array([0.5, -0.5])


def test_grid_spec_closed_form():
    g = GridSpec()
    pts = g.points()
    assert pts.shape == (961, 2)
    assert np.array_equal(pts[0], [-2, -2]) and np.array_equal(pts[-1], [2, 2]) and np.array_equal(pts[1], [-2, -2 + 4 / 30])
    assert np.array_equal(pts, GridSpec().points())
    ph = g.phases()
    assert len(ph) == 31 and ph[0] == 0.0 and abs(ph[-1] - 2 * np.pi) < 1e-15


def test_grid_spec_validation():
    with pytest.raises(ValidationError) as info:
        GridSpec(nodes=(1, 31), eps_list=(1.0, 0.1), h_list=(0.1, 0.01))
    assert len(info.value.violations) == 3
    with pytest.raises(ValidationError):
        GridSpec(eps_list=())


def test_learning_error_zero_nets(pendulum):
    zero = StructuredNetSet.create("classical", pendulum, zero=True)
    grid = GridSpec(nodes=(11, 11), J=12, eps_list=(0.01, 0.1))
    t0 = learning_error_vs_eps(zero, pendulum, grid, k=0)
    assert np.array_equal(t0.values, np.zeros((2, 2)))
    t1 = learning_error_vs_eps(zero, pendulum, grid, k=1)
    Y, taus = grid.points(), grid.phases()
    TT, YY = np.repeat(taus, len(Y)), np.tile(Y, (len(taus), 1))
    for i, eps in enumerate(grid.eps_list):
        oracle = np.max(np.linalg.norm(pendulum_phi1(TT, YY, eps) - YY, axis=1))
        assert abs(t1.values[i, 1] - oracle) < 1e-12
    assert abs(t1.values[1, 1] / t1.values[0, 1] - 10.0) < 1e-9
    assert t1.rows == [0.01, 0.1] and t1.cols == ["F_error", "phi_error"]


def test_learning_error_marks_singular_points(pendulum):
    nets = StructuredNetSet.create("classical", pendulum, hidden=(4,), seed=0)
    t = learning_error_vs_eps(nets, pendulum, GridSpec(nodes=(5, 5), J=4, eps_list=(0.5, 1.0)), k=1)
    assert np.all(np.isfinite(t.values))
    # (0, 0) is singular to the last bit; elsewhere on y1 = 0 FD noise keeps the pivot above tolerance
    assert list(t.meta["singular_points"]) == ["1.0"] and t.meta["singular_points"]["1.0"] >= 1
    with pytest.raises(DomainError):
        learning_error_vs_eps(StructuredNetSet.create("autonomous", pendulum), pendulum, GridSpec(), 1)


def test_scheme_against_itself_is_zero(pendulum):
    cfg = ReferenceSolverConfig()
    cache = ReferenceCache(directory="")
    h, eps = 0.05, 0.1
    traj = integrate("micromacro", ExactProvider(pendulum), pendulum, Y0, 0.5, h, eps, EULER)
    cache._mem[ReferenceCache.key(pendulum, eps, Y0, traj.times, cfg, "classical")] = traj.states
    t = global_error_curve(ExactProvider(pendulum), pendulum, "micromacro", Y0, 0.5, [h], [eps], EULER, cfg, cache)
    assert t.values[0, 0] == 0.0 and cache.hits == 1


def test_failed_cells_are_marked(pendulum):
    class Picky(ExactProvider):
        def F(self, y, h, eps):
            if eps > 0.5:
                raise NumericalError("refused")
            return super().F(y, h, eps)

    t = global_error_curve(Picky(pendulum), pendulum, "slowfast", Y0, 0.2, [0.05, 0.1], [0.1, 1.0],
                           cache=ReferenceCache(directory=""))
    assert np.all(np.isfinite(t.values[:, 0])) and np.all(np.isnan(t.values[:, 1]))
    assert t.failures == 2 and len(t.meta["failures"]) == 2
    assert t.to_csv().splitlines()[1].endswith(",nan")


def test_orders_and_monotone_refinement(pendulum):
    hs = list(2.0 ** -np.arange(4, 9))
    t = global_error_curve(ExactProvider(pendulum), pendulum, "micromacro", Y0, 1.0, hs[::-1], [5e-2],
                           cache=ReferenceCache(directory=""))
    errs = t.values[::-1, 0]  # back to decreasing h order
    assert abs(convergence_slope(hs, errs) - 1.0) <= 0.15
    assert np.all(errs[1:] <= 1.1 * errs[:-1])


def test_ua_sweep_layout_and_spread(pendulum):
    cache = ReferenceCache(directory="")
    args = (ExactProvider(pendulum), pendulum, "micromacro", Y0, 0.5, [0.05, 0.1], [0.01, 0.1, 1.0])
    ua = ua_sweep(*args, cache=cache)
    ge = global_error_curve(*args, cache=cache)
    assert ua.row_name == "eps" and ua.values.shape == (3, 2)
    assert np.array_equal(ua.values, ge.values.T)
    spread = ua_spread(ua)
    assert spread.shape == (2,) and np.all(spread >= 1.0)
    with pytest.raises(ValidationError):
        ua_sweep(ExactProvider(pendulum), pendulum, "micromacro", Y0, 0.5, [0.1], [])


def test_convergence_slope_oracle():
    hs = np.array([0.1, 0.05, 0.025])
    assert abs(convergence_slope(hs, 3 * hs ** 2) - 2.0) < 1e-12
    assert np.isnan(convergence_slope(hs, [np.nan, np.nan, 1.0]))


def test_reference_cache_disk(pendulum, tmp_path):
    times = np.linspace(0, 0.1, 3)
    a = ReferenceCache(str(tmp_path))
    ref = a.get(pendulum, 0.1, Y0, times, ReferenceSolverConfig())
    assert a.misses == 1 and len(list(tmp_path.glob("*.npy"))) == 1
    a.get(pendulum, 0.1, Y0, times, ReferenceSolverConfig())
    assert a.hits == 1
    b = ReferenceCache(str(tmp_path))
    assert np.array_equal(b.get(pendulum, 0.1, Y0, times, ReferenceSolverConfig()), ref) and b.hits == 1
    # any change to the inputs changes the key
    b.get(pendulum, 0.1, Y0, times, ReferenceSolverConfig(rtol=1e-9))
    assert b.misses == 1


def test_error_table_csv_and_validation():
    t = ErrorTable("h", [0.1, 0.05], "eps", [0.01], [[1.5], [np.nan]])
    assert t.to_csv() == "h\\eps,0.01\n0.1,1.5\n0.05,nan\n"
    assert t.transpose().values.shape == (1, 2)
    with pytest.raises(DomainError):
        ErrorTable("h", [0.1], "eps", [0.01, 0.1], [[1.0]])


def test_coarse_arm_accepted():
    assert COARSE_ARM.K == 800 and COARSE_ARM.hidden == (25,)


def test_scale_study_identical_arms(pendulum):
    arm = ScaleArm(K=60, hidden=(4,), train=TrainConfig(epochs=1, batch_size=20), label="a")
    dom = SamplingDomains(seed=3)
    tables, summary = training_scale_study(pendulum, [arm, arm], dom, Y0, 0.2, [0.05, 0.1], [0.1, 1.0],
                                           cache=ReferenceCache(directory=""))
    assert np.array_equal(tables[0].values, tables[1].values)
    assert summary["cells"] == 4 and summary["second_not_worse"] == 4 and summary["median_ratio"] == 1.0
    with pytest.raises(DomainError):
        training_scale_study(pendulum, [arm], dom, Y0, 0.2, [0.1], [0.1])


def test_write_svg(tmp_path):
    pytest.importorskip("matplotlib")
    t = ErrorTable("h", [0.1, 0.05], "eps", [0.01, 0.1], [[1e-2, 2e-2], [5e-3, 1e-2]])
    path = tmp_path / "chart.svg"
    assert write_svg(t, str(path), "demo")
    assert path.read_text().lstrip().startswith("<?xml")
