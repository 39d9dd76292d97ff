import numpy as np
import pytest

from oscillode.datagen import Dataset, SamplingDomains, build_dataset
from oscillode.errors import DomainError, ModeError, NumericalError
from oscillode.integrators import EULER, MIDPOINT
from oscillode.neuralnet import StructuredNetSet
from oscillode.training import (
    LossReport, TrainConfig, autonomous_loss, classical_loss, evaluate, loss_and_grads, read_loss_csv, train,
    training_metadata, write_loss_csv,
)


@pytest.fixture(scope="module")
def vdp_auto_dataset(vdp):
    return build_dataset(vdp, SamplingDomains(seed=5, h_range=(1e-2, 1e-1), eps_range=(0.05, 1.0)), 120,
                         form="autonomous")


def _record(t0=0.0, y0=(0.5, -0.5), h=0.01, eps=0.05, y1=(0.5, -0.5)):
    return dict(t0=np.array([t0]), y0=np.array([y0]), h=np.array([h]), eps=np.array([eps]), y1=np.array([y1]))


def _take(ds, rows):
    return {k: v[rows] for k, v in ds.subset(np.arange(ds.K)).items()}


def _zero_phase_nets(problem, seed=0):
    nets = StructuredNetSet.create("classical", problem, hidden=(6,), seed=seed)
    for k in ("plus", "minus"):
        for p in nets.nets[k].params():
            p[...] = 0.0
    return nets


def test_config_validation():
    with pytest.raises(DomainError):
        TrainConfig(batch_size=0)
    with pytest.raises(DomainError):
        TrainConfig(epochs=0)
    with pytest.raises(DomainError):
        TrainConfig(mode="hybrid")


def test_zero_nets_euler_terms(pendulum, small_dataset):
    nets = StructuredNetSet.create("classical", pendulum, zero=True)
    batch = _take(small_dataset, np.arange(50))
    loss, (a, b, c) = classical_loss(nets, batch, EULER, terms=True)
    assert b == 0.0 and c == 0.0
    y0, h = batch["y0"], batch["h"][:, None]
    expected = np.mean(np.sum((y0 + h * pendulum.average(y0) - batch["y1"]) ** 2, axis=1))
    assert abs(a - expected) <= 1e-15 * max(1.0, expected) and loss == a


def test_hand_example(pendulum):
    rec = _record(y1=(0.51, -0.49))
    nets = StructuredNetSet.create("classical", pendulum, zero=True)
    y0 = np.array([0.5, -0.5])
    pred = y0 + 0.01 * np.array([-0.5, np.sin(0.5) - 0.25 * np.sin(1.0)])
    hand = float(np.sum((pred - np.array([0.51, -0.49])) ** 2))
    assert abs(classical_loss(nets, rec, EULER) - hand) < 1e-12


@pytest.mark.parametrize("method", [EULER, MIDPOINT])
def test_self_consistent_record_has_zero_loss(pendulum, method):
    nets = _zero_phase_nets(pendulum, seed=3)
    y0 = np.array([0.5, -0.5])
    if method is EULER:
        y1 = y0 + 0.01 * nets.F(y0, 0.01, 0.05)
    else:
        from oscillode.integrators import step
        y1 = step(MIDPOINT, lambda t, y: nets.F(y, 0.01, 0.05), 0.0, 0.01, y0)
    loss = classical_loss(nets, _record(y1=tuple(y1)), method)
    assert loss < 1e-24


@pytest.mark.parametrize("seed", range(4))
def test_autoencoder_terms_vanish_with_zero_phase_nets(pendulum, small_dataset, seed):
    nets = _zero_phase_nets(pendulum, seed)
    rows = np.random.default_rng(seed).choice(small_dataset.K, 30, replace=False)
    for method in (EULER, MIDPOINT):
        _, (_, b, c) = classical_loss(nets, _take(small_dataset, rows), method, terms=True)
        assert b == 0.0 and c == 0.0


def test_autonomous_zero_nets(vdp, vdp_auto_dataset):
    nets = StructuredNetSet.create("autonomous", vdp, zero=True)
    batch = _take(vdp_auto_dataset, np.arange(40))
    _, (a, b) = autonomous_loss(nets, batch, terms=True)
    assert b == 0.0
    assert abs(a - np.mean(np.sum((batch["y1"] - batch["y0"]) ** 2, axis=1))) < 1e-15


def test_autonomous_identity_flow_commutes(vdp, vdp_auto_dataset):
    nets = StructuredNetSet.create("autonomous", vdp, seed=2)
    for p in nets.nets["flow"].params():
        p[...] = 0.0
    _, (_, b) = autonomous_loss(nets, _take(vdp_auto_dataset, np.arange(40)), terms=True)
    assert b == 0.0


def test_batch_duplication_and_permutation(pendulum, vdp, small_dataset, vdp_auto_dataset):
    nets = StructuredNetSet.create("classical", pendulum, hidden=(5,), seed=1)
    rows = np.arange(25)
    one = classical_loss(nets, _take(small_dataset, rows), MIDPOINT)
    two = classical_loss(nets, _take(small_dataset, np.concatenate([rows, rows])), MIDPOINT)
    perm = classical_loss(nets, _take(small_dataset, rows[::-1]), MIDPOINT)
    assert abs(one - two) <= 1e-14 * one and abs(one - perm) <= 1e-14 * one
    anets = StructuredNetSet.create("autonomous", vdp, hidden=(5,), seed=1)
    one = autonomous_loss(anets, _take(vdp_auto_dataset, rows))
    two = autonomous_loss(anets, _take(vdp_auto_dataset, np.concatenate([rows, rows])))
    assert abs(one - two) <= 1e-14 * one


@pytest.mark.parametrize("mode,method", [("classical", EULER), ("classical", MIDPOINT), ("autonomous", EULER)])
def test_loss_gradient_matches_fd(mode, method, pendulum, vdp, small_dataset, vdp_auto_dataset):
    rng = np.random.default_rng(8)
    problem, ds = (pendulum, small_dataset) if mode == "classical" else (vdp, vdp_auto_dataset)
    nets = StructuredNetSet.create(mode, problem, hidden=(7,), seed=4)
    batch = _take(ds, np.arange(4))
    cfg = TrainConfig(mode=mode, method=method)
    _, grads = loss_and_grads(nets, batch, cfg)
    flat = nets.flat_grads(grads)
    params = nets.params()
    direction = [rng.normal(size=p.shape) for p in params]
    analytic = sum(float(np.sum(g * d)) for g, d in zip(flat, direction))
    e = 1e-6

    def loss_at(s):
        for p, d in zip(params, direction):
            p += s * d
        val = evaluate(nets, batch, cfg)
        for p, d in zip(params, direction):
            p -= s * d
        return val

    fd = (loss_at(e) - loss_at(-e)) / (2 * e)
    assert abs(analytic - fd) <= 1e-4 * abs(fd)


def test_mode_mismatch(pendulum, vdp, small_dataset, vdp_auto_dataset):
    with pytest.raises(ModeError):
        classical_loss(StructuredNetSet.create("autonomous", vdp), _record())
    with pytest.raises(ModeError):
        autonomous_loss(StructuredNetSet.create("classical", pendulum), _record())
    with pytest.raises(ModeError):
        train(StructuredNetSet.create("classical", pendulum), small_dataset, TrainConfig(mode="autonomous"))
    with pytest.raises(DomainError):
        train(StructuredNetSet.create("autonomous", pendulum), small_dataset, TrainConfig(mode="autonomous"))


def test_zero_learning_rate_freezes(pendulum, small_dataset):
    nets = StructuredNetSet.create("classical", pendulum, hidden=(6,), seed=0)
    before = [p.copy() for p in nets.params()]
    nets, rep = train(nets, small_dataset, TrainConfig(epochs=3, lr=0.0, weight_decay=0.5))
    assert all(np.array_equal(a, b) for a, b in zip(before, nets.params()))
    assert len(set(rep.loss_train)) == 1 and len(set(rep.loss_test)) == 1


def test_training_is_deterministic_and_learns(pendulum, small_dataset):
    cfg = TrainConfig(epochs=4, batch_size=40, lr=5e-3, seed=7)
    a_nets, a = train(StructuredNetSet.create("classical", pendulum, hidden=(8,), seed=1), small_dataset, cfg)
    b_nets, b = train(StructuredNetSet.create("classical", pendulum, hidden=(8,), seed=1), small_dataset, cfg)
    assert a.loss_train == b.loss_train and a.loss_test == b.loss_test
    assert all(np.array_equal(p, q) for p, q in zip(a_nets.params(), b_nets.params()))
    assert len(a.loss_train) == 4 and len(a.seconds) == 4
    assert a.loss_train[-1] < a.loss_train[0]
    c = train(StructuredNetSet.create("classical", pendulum, hidden=(8,), seed=1), small_dataset,
              TrainConfig(epochs=4, batch_size=40, lr=5e-3, seed=8))[1]
    assert c.loss_train != a.loss_train


def test_autonomous_training_runs(vdp, vdp_auto_dataset):
    nets, rep = train(StructuredNetSet.create("autonomous", vdp, hidden=(8,)), vdp_auto_dataset,
                      TrainConfig(mode="autonomous", epochs=3, batch_size=20, lr=5e-3))
    assert rep.loss_train[-1] < rep.loss_train[0] and np.all(np.isfinite(rep.loss_test))


def test_no_test_leakage(pendulum, small_dataset):
    _, test_idx = small_dataset.split_indices()
    y1 = small_dataset.y1.copy()
    y1[test_idx] += 100.0
    tampered = Dataset(**{**small_dataset.__dict__, "y1": y1})
    cfg = TrainConfig(epochs=2, batch_size=50, seed=1)
    a_nets, a = train(StructuredNetSet.create("classical", pendulum, hidden=(6,)), small_dataset, cfg)
    b_nets, b = train(StructuredNetSet.create("classical", pendulum, hidden=(6,)), tampered, cfg)
    assert all(np.array_equal(p, q) for p, q in zip(a_nets.params(), b_nets.params()))
    assert a.loss_train == b.loss_train and a.loss_test != b.loss_test


def test_nan_weights_abort_with_location(pendulum, small_dataset):
    nets = StructuredNetSet.create("classical", pendulum, hidden=(6,))
    nets.nets["F"].weights[0][0, 0] = np.nan
    with pytest.raises(NumericalError, match=r"epoch 1, batch 0"):
        train(nets, small_dataset, TrainConfig(epochs=2))


def test_resume_matches_uninterrupted(pendulum, small_dataset, tmp_path):
    full_dir, part_dir = tmp_path / "full", tmp_path / "part"
    cfg = dict(batch_size=64, lr=3e-3, seed=2)
    ref_nets, ref = train(StructuredNetSet.create("classical", pendulum, hidden=(6,)), small_dataset,
                          TrainConfig(epochs=4, checkpoint_dir=str(full_dir), **cfg))
    train(StructuredNetSet.create("classical", pendulum, hidden=(6,)), small_dataset,
          TrainConfig(epochs=2, checkpoint_dir=str(part_dir), **cfg))
    nets, rep = train(StructuredNetSet.create("classical", pendulum, hidden=(6,), seed=99), small_dataset,
                      TrainConfig(epochs=4, checkpoint_dir=str(part_dir), resume=True, **cfg))
    assert rep.loss_train == ref.loss_train and rep.loss_test == ref.loss_test
    assert all(np.array_equal(p, q) for p, q in zip(nets.params(), ref_nets.params()))
    assert (part_dir / "best.json").exists() and (part_dir / "last.json").exists()


def test_loss_csv(tmp_path, pendulum, small_dataset):
    path = tmp_path / "loss.csv"
    _, rep = train(StructuredNetSet.create("classical", pendulum, hidden=(4,)), small_dataset,
                   TrainConfig(epochs=2, loss_csv=str(path)))
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,loss_train,loss_test,seconds" and len(lines) == 3
    back = read_loss_csv(path)
    assert back.loss_train == rep.loss_train and back.loss_test == rep.loss_test
    write_loss_csv(tmp_path / "again.csv", back)
    assert read_loss_csv(tmp_path / "again.csv").loss_train == rep.loss_train


def test_metadata_has_no_timing(pendulum, small_dataset):
    rep = LossReport([1.0], [2.0], [3.5])
    meta = training_metadata(TrainConfig(), small_dataset, rep, (32,))
    assert "seconds" not in meta and meta["dataset"]["K"] == 400 and meta["hidden"] == [32]
