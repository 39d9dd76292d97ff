"""Loss functions and the mini-batch training loop."""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .datagen import Dataset
from .errors import DomainError, ModeError, NumericalError
from .integrators import EULER, OneStepMethod
from .io import atomic_write_text
from .neuralnet import OptimizerState, StructuredNetSet, load_checkpoint, optimizer_update

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 100
    epochs: int = 50
    lr: float = 2e-3
    weight_decay: float = 1e-9
    method: OneStepMethod = EULER
    mode: str = "classical"
    seed: int = 0
    loss_csv: str | None = None
    checkpoint_dir: str | None = None
    resume: bool = False

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise DomainError("batch_size and epochs must be >= 1")
        if self.mode not in ("classical", "autonomous"):
            raise DomainError(f"unknown mode {self.mode!r}")
        if self.lr < 0 or self.weight_decay < 0:
            raise DomainError("lr and weight_decay must be non-negative")


@dataclass
class LossReport:
    loss_train: list = field(default_factory=list)
    loss_test: list = field(default_factory=list)
    seconds: list = field(default_factory=list)

    def rows(self):
        return [(i + 1, a, b, s) for i, (a, b, s) in enumerate(zip(self.loss_train, self.loss_test, self.seconds))]

    def to_csv(self):
        lines = ["epoch,loss_train,loss_test,seconds"]
        lines += [f"{e},{a!r},{b!r},{s:.3f}" for e, a, b, s in self.rows()]
        return "\n".join(lines) + "\n"


def _batch(batch):
    if isinstance(batch, Dataset):
        batch = batch.subset(np.arange(batch.K))
    t0 = np.asarray(batch["t0"], dtype=float)
    y0 = np.atleast_2d(np.asarray(batch["y0"], dtype=float))
    h = np.asarray(batch["h"], dtype=float)
    eps = np.asarray(batch["eps"], dtype=float)
    y1 = np.atleast_2d(np.asarray(batch["y1"], dtype=float))
    return t0.reshape(-1), y0, h.reshape(-1), eps.reshape(-1), y1


def _sq(r):
    return float(np.mean(np.sum(r * r, axis=1)))


def classical_loss(nets: StructuredNetSet, batch, method: OneStepMethod = EULER, grads=None, terms=False):
    """Slow-fast term plus the two auto-encoder terms, each a batch mean of
    squared norms. With ``grads`` (from nets.zero_grads()) the gradient of the
    total loss is accumulated into it.

    For the midpoint rule the macro step is written as an explicit residual
    that uses the minus-net image of the known target y1, so no nonlinear
    solve happens inside the loss.
    """
    if nets.mode != "classical":
        raise ModeError("classical_loss needs classical nets")
    t0, y0, h, eps, y1 = _batch(batch)
    B = len(t0)
    tau0 = t0 / eps
    tau1 = (t0 + h) / eps
    H = h[:, None]

    z0, back_m0 = nets.phi_vjp("-", tau0, y0, eps, grads)
    if method.kind == "forward-euler":
        Fz, back_F = nets.F_vjp(z0, h, eps, grads)
    else:
        zT, back_mT = nets.phi_vjp("-", tau1, y1, eps, grads)
        Fz, back_F = nets.F_vjp(0.5 * (z0 + zT), h, eps, grads)
    z1 = z0 + H * Fz
    y1_hat, back_p1 = nets.phi_vjp("+", tau1, z1, eps, grads)
    ra = y1_hat - y1

    yb, back_p0 = nets.phi_vjp("+", tau0, z0, eps, grads)
    rb = yb - y0

    u, back_pc = nets.phi_vjp("+", tau0, y0, eps, grads)
    yc, back_mc = nets.phi_vjp("-", tau0, u, eps, grads)
    rc = yc - y0

    parts = (_sq(ra), _sq(rb), _sq(rc))
    loss = sum(parts)
    if not np.isfinite(loss):
        raise NumericalError("non-finite classical loss")

    if grads is not None:
        gz1 = back_p1(2.0 * ra / B)
        gF = back_F(H * gz1)
        gz0 = gz1.copy()
        if method.kind == "forward-euler":
            gz0 += gF
        else:
            gz0 += 0.5 * gF
            back_mT(0.5 * gF)
        gz0 += back_p0(2.0 * rb / B)
        back_m0(gz0)
        back_pc(back_mc(2.0 * rc / B))
    return (loss, parts) if terms else loss


def autonomous_loss(nets: StructuredNetSet, batch, grads=None, terms=False):
    """Data term |y1 - phase(h/eps, flow(y0))|^2 plus the commutator term
    |phase(flow(y0)) - flow(phase(y0))|^2, batch means."""
    if nets.mode != "autonomous":
        raise ModeError("autonomous_loss needs autonomous nets")
    t0, y0, h, eps, y1 = _batch(batch)
    B = len(t0)
    tau = (t0 + h) / eps

    p1, back_flow1 = nets.flow_vjp(y0, h, eps, grads)
    y1_hat, back_ph1 = nets.phi_vjp("+", tau, p1, eps, grads)
    q, back_ph2 = nets.phi_vjp("+", tau, y0, eps, grads)
    r, back_flow2 = nets.flow_vjp(q, h, eps, grads)
    ra = y1_hat - y1
    rb = y1_hat - r
    parts = (_sq(ra), _sq(rb))
    loss = sum(parts)
    if not np.isfinite(loss):
        raise NumericalError("non-finite autonomous loss")

    if grads is not None:
        back_flow1(back_ph1(2.0 * (ra + rb) / B))
        back_ph2(back_flow2(-2.0 * rb / B))
    return (loss, parts) if terms else loss


def loss_and_grads(nets, batch, cfg: TrainConfig):
    grads = nets.zero_grads()
    if cfg.mode == "classical":
        loss = classical_loss(nets, batch, cfg.method, grads)
    else:
        loss = autonomous_loss(nets, batch, grads)
    return loss, grads


def evaluate(nets, batch, cfg: TrainConfig, chunk: int = 4096) -> float:
    """Loss over a whole split without gradients (chunked, mean-weighted)."""
    t0, y0, h, eps, y1 = _batch(batch)
    n = len(t0)
    if n == 0:
        return float("nan")
    total = 0.0
    for i in range(0, n, chunk):
        sl = slice(i, i + chunk)
        part = dict(t0=t0[sl], y0=y0[sl], h=h[sl], eps=eps[sl], y1=y1[sl])
        if cfg.mode == "classical":
            total += classical_loss(nets, part, cfg.method) * len(t0[sl])
        else:
            total += autonomous_loss(nets, part) * len(t0[sl])
    return total / n


def _epoch_rng(seed, epoch):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(epoch,)))


def train(nets: StructuredNetSet, dataset: Dataset, cfg: TrainConfig, metadata=None):
    """Mini-batch Adam on the training split; test loss after every epoch.

    Loss_Train of an epoch is the full training-split loss measured after
    that epoch's updates, on the same footing as Loss_Test.
    """
    if nets.mode != cfg.mode:
        raise ModeError(f"nets are {nets.mode}, config asks for {cfg.mode}")
    if cfg.mode == "autonomous" and np.any(dataset.t0 != 0):
        raise DomainError("autonomous training needs records with t0 = 0")
    train_idx, test_idx = dataset.split_indices()
    if len(train_idx) == 0:
        raise DomainError("empty training split")
    train_set = dataset.subset(train_idx)
    test_set = dataset.subset(test_idx)
    params = nets.params()
    opt = OptimizerState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    report = LossReport()
    start_epoch = 0
    best = np.inf

    if cfg.checkpoint_dir and cfg.resume:
        last = os.path.join(cfg.checkpoint_dir, "last.json")
        if os.path.exists(last):
            nets, meta = load_checkpoint(last)
            params = nets.params()
            st = meta["train_state"]
            opt = OptimizerState.from_dict(st["optimizer"], params)
            report = LossReport(st["loss_train"], st["loss_test"], st["seconds"])
            start_epoch = len(report.loss_train)
            best = min(report.loss_test) if report.loss_test else np.inf
            log.info("resuming from epoch %d", start_epoch)

    if cfg.lr == 0:
        log.warning("learning rate is 0: parameters will not change")

    n = len(train_idx)
    for epoch in range(start_epoch, cfg.epochs):
        started = time.perf_counter()
        order = _epoch_rng(cfg.seed, epoch).permutation(n)
        for b, i in enumerate(range(0, n, cfg.batch_size)):
            rows = order[i:i + cfg.batch_size]
            batch = {k: v[rows] for k, v in train_set.items()}
            try:
                _, grads = loss_and_grads(nets, batch, cfg)
                optimizer_update(params, nets.flat_grads(grads), opt)
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch + 1}, batch {b}: {exc}") from None
        lt = evaluate(nets, train_set, cfg)
        lv = evaluate(nets, test_set, cfg) if len(test_idx) else float("nan")
        if not np.isfinite(lt):
            raise NumericalError(f"non-finite training loss after epoch {epoch + 1}")
        report.loss_train.append(lt)
        report.loss_test.append(lv)
        report.seconds.append(time.perf_counter() - started)
        log.info("epoch %d/%d  loss_train=%.3e  loss_test=%.3e", epoch + 1, cfg.epochs, lt, lv)
        if cfg.checkpoint_dir:
            _write_epoch_checkpoints(nets, opt, report, cfg, metadata, improved=lv < best)
            best = min(best, lv)
        if cfg.loss_csv:
            atomic_write_text(cfg.loss_csv, report.to_csv())
    return nets, report


def _write_epoch_checkpoints(nets, opt, report, cfg, metadata, improved):
    from .neuralnet import save_checkpoint
    os.makedirs(cfg.checkpoint_dir, exist_ok=True)
    meta = dict(metadata or {})
    meta["train_state"] = {"optimizer": opt.to_dict(), "loss_train": report.loss_train,
                           "loss_test": report.loss_test, "seconds": report.seconds}
    save_checkpoint(os.path.join(cfg.checkpoint_dir, "last.json"), nets, meta)
    if improved:
        save_checkpoint(os.path.join(cfg.checkpoint_dir, "best.json"), nets, dict(metadata or {}))


def training_metadata(cfg: TrainConfig, dataset: Dataset, report: LossReport, hidden) -> dict:
    """Deterministic description of a run (no wall-clock values)."""
    return {
        "method": cfg.method.kind,
        "mode": cfg.mode,
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "lr": cfg.lr,
        "weight_decay": cfg.weight_decay,
        "seed": cfg.seed,
        "hidden": list(hidden),
        "dataset": {"problem": dataset.problem, "K": dataset.K, "K0": dataset.K0, "seed": dataset.seed},
        "loss_train": report.loss_train,
        "loss_test": report.loss_test,
    }


def write_loss_csv(path, report: LossReport):
    atomic_write_text(path, report.to_csv())


def read_loss_csv(path) -> LossReport:
    rep = LossReport()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rep.loss_train.append(float(row["loss_train"]))
            rep.loss_test.append(float(row["loss_test"]))
            rep.seconds.append(float(row["seconds"]))
    return rep


def dumps_report(report: LossReport) -> str:
    return json.dumps({"loss_train": report.loss_train, "loss_test": report.loss_test})
