"""Command-line entry point ``oscillode``.

Exit codes: 0 success, 2 validation, 3 numerical failure, 4 I/O.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .config import RunConfig, load_config, load_preset
from .datagen import SamplingDomains, build_dataset, read_dataset, write_dataset
from .errors import OscillodeError, ValidationError
from .experiments import (GridSpec, ReferenceCache, ScaleArm, global_error_curve, learning_error_vs_eps,
                          training_scale_study, ua_spread, ua_sweep, write_svg)
from .integrators import OneStepMethod, ReferenceSolverConfig
from .io import atomic_write_text
from .micromacro import ExactProvider, LearnedProvider, integrate, to_original_variables
from .neuralnet import StructuredNetSet, load_checkpoint, save_checkpoint
from .problems import CATALOG, get_problem
from .training import TrainConfig, train, training_metadata

log = logging.getLogger("oscillode")


# --- argument parsing helpers ------------------------------------------------

def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _pair(text):
    v = _floats(text)
    if len(v) != 2:
        raise argparse.ArgumentTypeError(f"expected 'a,b', got {text!r}")
    return tuple(v)


def _box(text):
    """'a:b,c:d' -> ((a, b), (c, d))."""
    try:
        return tuple(tuple(float(x) for x in part.split(":")) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a box like -2:2,-2:2, got {text!r}") from None


def _pick(flag, cfg: RunConfig | None, attr, default):
    if flag is not None:
        return flag
    if cfg is not None and attr is not None:
        return getattr(cfg, attr)
    return default


def _config(args) -> RunConfig | None:
    if getattr(args, "config", None):
        return load_config(args.config)
    if getattr(args, "preset", None):
        return load_preset(args.preset)
    return None


def _solver_cfg(args):
    return ReferenceSolverConfig(rtol=args.rtol or 1e-10, atol=args.atol or 1e-12)


def _summary(**kw):
    print(" ".join(f"{k}={v}" for k, v in kw.items()))


def _threads(args):
    return args.threads if args.threads else (os.cpu_count() or 1)


# --- subcommands -----------------------------------------------------------

def cmd_gen_data(args):
    cfg = _config(args)
    problem = get_problem(_pick(args.problem, cfg, "problem", None) or _missing("--problem"))
    seed = _pick(args.seed, cfg, "seed", None)
    if seed is None:
        _missing("--seed")
    K = _pick(args.K, cfg, "K", None) or _missing("--K")
    omega = args.omega or (tuple(tuple(b) for b in cfg.omega) if cfg else ((-2.0, 2.0),) * problem.dim)
    domains = SamplingDomains(
        omega=omega,
        h_range=_pick(args.h_range, cfg, "h_range", (1e-3, 1e-1)),
        eps_range=_pick(args.eps_range, cfg, "eps_range", (1e-3, 1.0)),
        seed=seed,
    )
    if args.form == "autonomous":
        domains = domains.autonomous()
    fraction = _pick(args.train_fraction, cfg, "train_fraction", 0.8)
    ds = build_dataset(problem, domains, K, _solver_cfg(args), form=args.form, train_fraction=fraction,
                       threads=_threads(args))
    write_dataset(args.out, ds)
    _summary(status="ok", command="gen-data", problem=problem.name, form=args.form, K=ds.K, K0=ds.K0,
             resampled=ds.resampled, flagged=len(ds.flagged), out=args.out)


def cmd_train(args):
    cfg = _config(args)
    ds = read_dataset(args.data)
    problem = get_problem(ds.problem)
    mode = args.mode or ("autonomous" if ds.form == "autonomous" else "classical")
    seed = _pick(args.seed, cfg, "seed", None)
    if seed is None:
        _missing("--seed")
    tc = TrainConfig(
        batch_size=_pick(args.batch, cfg, "batch", 100),
        epochs=_pick(args.epochs, cfg, "epochs", 50),
        lr=_pick(args.lr, cfg, "lr", 2e-3),
        weight_decay=_pick(args.wd, cfg, "wd", 1e-9),
        method=OneStepMethod(_pick(args.method, cfg, "method", "euler")),
        mode=mode,
        seed=seed,
        loss_csv=args.loss_csv,
        checkpoint_dir=None if args.no_epoch_checkpoints else (args.checkpoint_dir or args.out + ".epochs"),
        resume=args.resume,
    )
    layers = _pick(args.layers, cfg, "layers", 1)
    neurons = _pick(args.neurons, cfg, "neurons", 32)
    hidden = (neurons,) * layers
    nets = StructuredNetSet.create(mode, problem, hidden=hidden, seed=seed)
    started = time.time()
    base_meta = {"method": tc.method.kind, "mode": mode, "seed": seed, "hidden": list(hidden)}
    nets, report = train(nets, ds, tc, metadata=base_meta)
    save_checkpoint(args.out, nets, training_metadata(tc, ds, report, hidden))
    # wall-clock data lives in a sidecar so the checkpoint stays reproducible
    atomic_write_text(args.out + ".run.json", json.dumps(
        {"started": started, "seconds_per_epoch": report.seconds, "version": __version__}, indent=1) + "\n")
    _summary(status="ok", command="train", mode=mode, epochs=tc.epochs, loss_train=f"{report.loss_train[-1]:.6e}",
             loss_test=f"{report.loss_test[-1]:.6e}", out=args.out)


def _source(args, problem_name):
    """Provider or nets from --ckpt / --exact, plus the problem."""
    if args.ckpt and args.exact is not None:
        raise ValidationError(["give either --ckpt or --exact, not both"])
    if args.ckpt:
        nets, _ = load_checkpoint(args.ckpt)
        if problem_name and problem_name != nets.problem.name:
            raise ValidationError([f"--problem {problem_name} does not match checkpoint problem {nets.problem.name}"])
        if nets.mode == "autonomous":
            return nets, nets.problem
        return LearnedProvider(nets, eta=args.eta), nets.problem
    if args.exact is None:
        raise ValidationError(["one of --ckpt or --exact is required"])
    problem = get_problem(problem_name or _missing("--problem"))
    return ExactProvider(problem, args.exact, eta=args.eta), problem


def _check_scheme(scheme, source):
    if (scheme == "auto-alt") != isinstance(source, StructuredNetSet):
        raise ValidationError([f"scheme {scheme} needs "
                               + ("an autonomous checkpoint" if scheme == "auto-alt" else "classical nets or --exact")])


def cmd_integrate(args):
    cfg = _config(args)
    source, problem = _source(args, _pick(args.problem, cfg, "problem", None))
    _check_scheme(args.scheme, source)
    y0 = _pick(args.y0, cfg, "y0", None) or _missing("--y0")
    if len(y0) != problem.dim:
        raise ValidationError([f"y0: expected {problem.dim} components"])
    T = _pick(args.T, cfg, "T", 1.0)
    eps = args.eps if args.eps is not None else (cfg.eps_list[0] if cfg else _missing("--eps"))
    h = args.h if args.h is not None else (cfg.h_for(eps) if cfg else _missing("--h"))
    method = OneStepMethod(_pick(args.method, cfg, "method", "euler"))
    kw = {"v_coupling": args.v_coupling} if args.scheme == "micromacro" else {}
    traj = integrate(args.scheme, source, problem, np.array(y0), T, h, eps, method, **kw)
    if args.original_variables:
        if problem.name != "van-der-pol" or args.scheme == "auto-alt":
            raise ValidationError(["--original-variables applies to Van der Pol classical schemes only"])
        traj = to_original_variables(traj, eps)
    d = problem.dim
    cols = ["t"] + [f"y{i}" for i in range(d)]
    data = [traj.times[:, None], traj.states]
    if args.scheme == "micromacro":
        cols += [f"v{i}" for i in range(d)] + [f"w{i}" for i in range(d)]
        data += [traj.v, traj.w]
    table = np.hstack(data)
    lines = [",".join(cols)] + [",".join(format(x, ".17g") for x in row) for row in table]
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    _summary(status="ok", command="integrate", scheme=args.scheme, provider=traj.meta.get("provider"), steps=len(traj) - 1,
             final=",".join(format(x, ".10g") for x in traj.states[-1]), out=args.out)


def _emit_table(table, args, title=""):
    table.write(args.out)
    if args.svg:
        write_svg(table, args.svg, title)


def cmd_experiment(args):
    cfg = _config(args)
    solver = _solver_cfg(args)
    cache = ReferenceCache()
    kind = args.kind
    eps_list = args.eps_list or (cfg.eps_list if cfg else None)
    if kind == "learning-error":
        if not args.ckpt:
            raise ValidationError(["learning-error needs --ckpt"])
        nets, _ = load_checkpoint(args.ckpt)
        grid = GridSpec(nodes=(args.nodes,) * nets.problem.dim, omega=((-2.0, 2.0),) * nets.problem.dim, J=args.J,
                        eps_list=tuple(sorted(eps_list or [1e-3, 1e-2, 1e-1, 1.0])))
        table = learning_error_vs_eps(nets, nets.problem, grid, k=args.k)
        _emit_table(table, args, "learning error")
        _summary(status="ok", command="experiment", kind=kind, rows=len(table.rows), out=args.out)
        return
    method = OneStepMethod(_pick(args.method, cfg, "method", "euler"))
    y0 = _pick(args.y0, cfg, "y0", None) or _missing("--y0")
    T = _pick(args.T, cfg, "T", 1.0)
    h_list = sorted(args.h_list or (cfg.h if cfg else [])) or _missing("--h-list")
    eps_list = sorted(eps_list or []) or _missing("--eps-list")
    if kind == "scale-study":
        problem = get_problem(_pick(args.problem, cfg, "problem", None) or _missing("--problem"))
        seed = _pick(args.seed, cfg, "seed", None)
        if seed is None:
            _missing("--seed")

        def arm(K, layers, neurons, label):
            tc = TrainConfig(batch_size=_pick(args.batch, cfg, "batch", 100), epochs=_pick(args.epochs, cfg, "epochs", 50),
                             lr=_pick(args.lr, cfg, "lr", 2e-3), weight_decay=_pick(args.wd, cfg, "wd", 1e-9),
                             method=method, seed=seed)
            return ScaleArm(K=K, hidden=(neurons,) * layers, train=tc, label=label)

        arms = [arm(args.K_coarse, args.layers_coarse, args.neurons_coarse, "coarse"),
                arm(args.K_fine, args.layers_fine, args.neurons_fine, "fine")]
        domains = SamplingDomains(omega=((-2.0, 2.0),) * problem.dim, seed=seed)
        tables, summary = training_scale_study(problem, arms, domains, y0, T, h_list, eps_list, method, solver, cache)
        stem = args.out[:-4] if args.out.endswith(".csv") else args.out
        for t in tables:
            t.write(f"{stem}-{t.meta['arm']}.csv")
        atomic_write_text(args.out, "key,value\n" + "".join(f"{k},{v}\n" for k, v in summary.items()))
        _summary(status="ok", command="experiment", kind=kind, **summary, out=args.out)
        return
    source, problem = _source(args, _pick(args.problem, cfg, "problem", None))
    _check_scheme(args.scheme, source)
    fn = global_error_curve if kind == "error-curve" else ua_sweep
    table = fn(source, problem, args.scheme, y0, T, h_list, eps_list, method, solver, cache)
    _emit_table(table, args, f"{args.scheme} {method.kind}")
    extra = {}
    if kind == "ua":
        extra["max_spread"] = f"{np.nanmax(ua_spread(table)):.4g}"
    _summary(status="ok", command="experiment", kind=kind, scheme=args.scheme, failures=table.failures, **extra,
             out=args.out)


def cmd_inspect(args):
    nets, meta = load_checkpoint(args.ckpt)
    info = {
        "mode": nets.mode,
        "problem": nets.problem.name,
        "nets": {k: list(n.widths) for k, n in nets.nets.items()},
        "parameters": int(sum(p.size for p in nets.params())),
        "metadata": {k: v for k, v in meta.items() if k not in ("loss_train", "loss_test", "train_state")},
    }
    if meta.get("loss_train"):
        info["final_loss_train"] = meta["loss_train"][-1]
        info["final_loss_test"] = meta["loss_test"][-1]
    print(json.dumps(info, indent=1, sort_keys=True))


def _missing(flag):
    raise ValidationError([f"missing required: {flag.lstrip('-')}"])


# --- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oscillode", description="Learning-based integrators for highly oscillatory ODEs.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--preset", help="name of a shipped preset configuration")
        sp.add_argument("--threads", type=int, default=None)
        sp.add_argument("--rtol", type=float, default=None)
        sp.add_argument("--atol", type=float, default=None)

    g = sub.add_parser("gen-data", help="generate a training dataset")
    common(g)
    g.add_argument("--problem", choices=sorted(CATALOG))
    g.add_argument("--K", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.add_argument("--h-range", type=_pair)
    g.add_argument("--eps-range", type=_pair)
    g.add_argument("--omega", type=_box)
    g.add_argument("--form", choices=["classical", "autonomous"], default="classical")
    g.add_argument("--train-fraction", type=float)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train the structured networks")
    common(t)
    t.add_argument("--data", required=True)
    t.add_argument("--mode", choices=["classical", "autonomous"])
    t.add_argument("--method", choices=["euler", "midpoint"])
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--wd", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--layers", type=int)
    t.add_argument("--neurons", type=int)
    t.add_argument("--out", required=True)
    t.add_argument("--loss-csv")
    t.add_argument("--checkpoint-dir")
    t.add_argument("--no-epoch-checkpoints", action="store_true")
    t.add_argument("--resume", action="store_true")
    t.set_defaults(func=cmd_train)

    def provider_flags(sp):
        sp.add_argument("--ckpt")
        sp.add_argument("--exact", type=int, choices=[0, 1])
        sp.add_argument("--eta", type=float, default=1e-5)
        sp.add_argument("--problem", choices=sorted(CATALOG))
        sp.add_argument("--scheme", choices=["slowfast", "micromacro", "auto-alt"], default="micromacro")
        sp.add_argument("--method", choices=["euler", "midpoint"])
        sp.add_argument("--y0", type=_floats)
        sp.add_argument("--T", type=float)

    i = sub.add_parser("integrate", help="integrate with a checkpoint or exact averaging")
    common(i)
    provider_flags(i)
    i.add_argument("--h", type=float)
    i.add_argument("--eps", type=float)
    i.add_argument("--v-coupling", choices=["average", "frozen"], default="average")
    i.add_argument("--original-variables", action="store_true", help="Van der Pol: report (q, p)")
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_integrate)

    e = sub.add_parser("experiment", help="run a measurement campaign")
    common(e)
    e.add_argument("kind", choices=["learning-error", "error-curve", "ua", "scale-study"])
    provider_flags(e)
    e.add_argument("--h-list", type=_floats)
    e.add_argument("--eps-list", type=_floats)
    e.add_argument("--k", type=int, choices=[0, 1], default=1)
    e.add_argument("--nodes", type=int, default=31)
    e.add_argument("--J", type=int, default=30)
    e.add_argument("--seed", type=int)
    e.add_argument("--epochs", type=int)
    e.add_argument("--batch", type=int)
    e.add_argument("--lr", type=float)
    e.add_argument("--wd", type=float)
    e.add_argument("--K-coarse", type=int, default=800)
    e.add_argument("--layers-coarse", type=int, default=1)
    e.add_argument("--neurons-coarse", type=int, default=25)
    e.add_argument("--K-fine", type=int, default=5000)
    e.add_argument("--layers-fine", type=int, default=1)
    e.add_argument("--neurons-fine", type=int, default=32)
    e.add_argument("--out", required=True)
    e.add_argument("--svg")
    e.set_defaults(func=cmd_experiment)

    c = sub.add_parser("inspect-ckpt", help="summarise a checkpoint")
    c.add_argument("--ckpt", required=True)
    c.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except OscillodeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
