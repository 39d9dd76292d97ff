"""Small tanh MLPs with hand-written reverse mode, Adam, and the structured
identity-perturbation networks built on top of them.

Arrays are batched row-wise: inputs (B, n_in), outputs (B, n_out).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, FormatError, ModeError, NumericalError
from .problems import OscillatoryProblem, get_problem, reduce_phase

CHECKPOINT_FORMAT = "oscillode-checkpoint/1"


class Mlp:
    """Affine - tanh - ... - affine network.

    ``weights[l]`` has shape (fan_in, fan_out) so a layer is ``a @ W + b``.
    """

    def __init__(self, widths, weights=None, biases=None, rng=None):
        self.widths = [int(w) for w in widths]
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise DomainError(f"invalid layer widths {widths}")
        if weights is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            weights, biases = [], []
            for n_in, n_out in zip(self.widths[:-1], self.widths[1:]):
                bound = 1.0 / math.sqrt(n_in)
                weights.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
                biases.append(rng.uniform(-bound, bound, size=n_out))
        self.weights = [np.array(w, dtype=float) for w in weights]
        self.biases = [np.array(b, dtype=float) for b in biases]
        for l, (n_in, n_out) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            if self.weights[l].shape != (n_in, n_out) or self.biases[l].shape != (n_out,):
                raise DomainError(f"layer {l} parameters do not match widths {self.widths}")

    @classmethod
    def zeros(cls, widths):
        ws = [np.zeros((a, b)) for a, b in zip(widths[:-1], widths[1:])]
        bs = [np.zeros(b) for b in widths[1:]]
        return cls(widths, ws, bs)

    @property
    def n_in(self):
        return self.widths[0]

    @property
    def n_out(self):
        return self.widths[-1]

    def params(self):
        """Flat list of parameter arrays, [W0, b0, W1, b1, ...]."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def zero_grads(self):
        return [np.zeros_like(p) for p in self.params()]

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n_in:
            raise DomainError(f"expected input width {self.n_in}, got {x.shape[-1]}")
        acts = [x]
        a = x
        last = len(self.weights) - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            a = z if l == last else np.tanh(z)
            acts.append(a)
        return a, acts

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, acts, upstream, grads=None):
        """Reverse pass. Accumulates into ``grads`` (same layout as params())
        and returns the gradient with respect to the input."""
        if grads is None:
            grads = self.zero_grads()
        g = np.asarray(upstream, dtype=float)
        for l in range(len(self.weights) - 1, -1, -1):
            if l < len(self.weights) - 1:
                g = g * (1.0 - acts[l + 1] ** 2)
            a_in = acts[l]
            grads[2 * l] += a_in.reshape(-1, a_in.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            grads[2 * l + 1] += g.reshape(-1, g.shape[-1]).sum(axis=0)
            g = g @ self.weights[l].T
        return g

    def copy(self):
        return Mlp(self.widths, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def to_dict(self):
        return {
            "widths": self.widths,
            "weights": [{"shape": list(w.shape), "data": w.ravel().tolist()} for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d):
        ws = [np.array(w["data"], dtype=float).reshape(w["shape"]) for w in d["weights"]]
        bs = [np.array(b, dtype=float) for b in d["biases"]]
        return cls(d["widths"], ws, bs)


def mlp_forward(net: Mlp, x):
    return net(x)


def mlp_gradients(net: Mlp, x, upstream):
    """Gradients of sum(upstream * net(x)) w.r.t. parameters and input."""
    _, acts = net.forward(x)
    grads = net.zero_grads()
    gx = net.backward(acts, upstream, grads)
    return grads, gx


# --- optimizer ---------------------------------------------------------------

@dataclass
class OptimizerState:
    lr: float = 2e-3
    weight_decay: float = 1e-9
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def to_dict(self):
        return {"lr": self.lr, "weight_decay": self.weight_decay, "betas": list(self.betas), "eps": self.eps,
                "step": self.step, "m": [a.ravel().tolist() for a in self.m],
                "v": [a.ravel().tolist() for a in self.v]}

    @classmethod
    def from_dict(cls, d, params):
        st = cls(d["lr"], d["weight_decay"], tuple(d["betas"]), d["eps"], d["step"])
        st.m = [np.array(a, dtype=float).reshape(p.shape) for a, p in zip(d["m"], params)]
        st.v = [np.array(a, dtype=float).reshape(p.shape) for a, p in zip(d["v"], params)]
        return st


def optimizer_update(params, grads, state: OptimizerState):
    """In-place Adam step with bias correction followed by decoupled decay."""
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient at optimizer step {state.step + 1}; update rejected")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    b1, b2 = state.betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p -= state.lr * state.weight_decay * p
    return params, state


# --- structured networks -------------------------------------------------------

CLASSICAL_NETS = ("F", "plus", "minus")
AUTONOMOUS_NETS = ("flow", "phase")


def _widths(n_in, d, hidden):
    return [n_in] + list(hidden) + [d]


class StructuredNetSet:
    """Identity-perturbation maps built from MLPs.

    classical:  F(y,h,eps) = <f>(y) + R_F(y,h,eps)
                phi_pm(tau,y,eps) = y + eps [R_pm(cos tau, sin tau, y, eps) - R_pm(1, 0, y, eps)]
    autonomous: flow(y,h,eps) = y + h R_flow(y,h,eps)
                phase(tau,y,eps) = y + [R_phase(cos tau, sin tau, y, eps) - R_phase(1, 0, y, eps)]
    """

    def __init__(self, mode, problem: OscillatoryProblem, nets: dict):
        if mode not in ("classical", "autonomous"):
            raise ModeError(f"unknown mode {mode!r}")
        names = CLASSICAL_NETS if mode == "classical" else AUTONOMOUS_NETS
        if set(nets) != set(names):
            raise ModeError(f"{mode} mode needs nets {names}, got {sorted(nets)}")
        self.mode = mode
        self.problem = problem
        self.nets = {k: nets[k] for k in names}
        d = problem.dim
        for k, net in self.nets.items():
            want = d + 2 if k in ("F", "flow") else d + 3
            if net.n_in != want or net.n_out != d:
                raise DomainError(f"net {k!r} must map {want} -> {d}, has widths {net.widths}")

    @classmethod
    def create(cls, mode, problem, hidden=(32,), seed=0, zero=False):
        d = problem.dim
        names = CLASSICAL_NETS if mode == "classical" else AUTONOMOUS_NETS
        rng = np.random.default_rng(seed)
        nets = {}
        for k in names:
            widths = _widths(d + 2 if k in ("F", "flow") else d + 3, d, hidden)
            nets[k] = Mlp.zeros(widths) if zero else Mlp(widths, rng=rng)
        return cls(mode, problem, nets)

    @property
    def d(self):
        return self.problem.dim

    def params(self):
        out = []
        for k in self.nets:
            out += self.nets[k].params()
        return out

    def zero_grads(self):
        return {k: net.zero_grads() for k, net in self.nets.items()}

    def flat_grads(self, grads):
        out = []
        for k in self.nets:
            out += grads[k]
        return out

    def copy(self):
        return StructuredNetSet(self.mode, self.problem, {k: n.copy() for k, n in self.nets.items()})

    def _require(self, mode):
        if self.mode != mode:
            raise ModeError(f"operation needs {mode} nets, these are {self.mode}")

    # each *_vjp returns (value, backward); backward(g) accumulates parameter
    # gradients into ``grads`` and returns the gradient w.r.t. the state input

    def _field_vjp(self, name, y, h, eps, grads, average):
        y = np.asarray(y, dtype=float)
        B = y.shape[0]
        x = np.concatenate([y, _col(h, B), _col(eps, B)], axis=1)
        r, acts = self.nets[name].forward(x)
        if average:
            out = self.problem.average(y) + r
        else:
            out = y + _col(h, B) * r

        def back(g):
            gr = g if average else _col(h, B) * g
            gx = self.nets[name].backward(acts, gr, grads[name] if grads is not None else None)
            gy = gx[:, : self.d]
            if average:
                return gy + _average_vjp(self.problem, y, g)
            return gy + g

        return out, back

    def _phase_vjp(self, name, tau, y, eps, grads, scaled):
        y = np.asarray(y, dtype=float)
        B = y.shape[0]
        tau = reduce_phase(np.broadcast_to(np.asarray(tau, dtype=float), (B,)))
        e = _col(eps, B)
        x1 = np.concatenate([np.cos(tau)[:, None], np.sin(tau)[:, None], y, e], axis=1)
        x0 = np.concatenate([np.ones((B, 1)), np.zeros((B, 1)), y, e], axis=1)
        net = self.nets[name]
        r1, a1 = net.forward(x1)
        r0, a0 = net.forward(x0)
        s = e if scaled else 1.0
        out = y + s * (r1 - r0)

        def back(g):
            gr = s * g
            gacc = grads[name] if grads is not None else None
            gx1 = net.backward(a1, gr, gacc)
            gx0 = net.backward(a0, -gr, gacc)
            return g + gx1[:, 2: 2 + self.d] + gx0[:, 2: 2 + self.d]

        return out, back

    def F_vjp(self, y, h, eps, grads=None):
        self._require("classical")
        return self._field_vjp("F", y, h, eps, grads, average=True)

    def phi_vjp(self, sign, tau, y, eps, grads=None):
        if self.mode == "classical":
            name = {"+": "plus", "-": "minus"}[sign]
            return self._phase_vjp(name, tau, y, eps, grads, scaled=True)
        return self._phase_vjp("phase", tau, y, eps, grads, scaled=False)

    def flow_vjp(self, y, h, eps, grads=None):
        self._require("autonomous")
        return self._field_vjp("flow", y, h, eps, grads, average=False)

    # plain evaluation, accepting single states or batches

    def F(self, y, h, eps):
        self._require("classical")
        return _unbatched(lambda Y: self.F_vjp(Y, h, eps)[0], y)

    def phi(self, sign, tau, y, eps):
        return _unbatched(lambda Y: self.phi_vjp(sign, tau, Y, eps)[0], y)

    def phase_net_diff(self, sign, tau, y, eps):
        """R(cos tau, sin tau, y, eps) - R(1, 0, y, eps) for the given phase net."""
        name = "phase" if self.mode == "autonomous" else {"+": "plus", "-": "minus"}[sign]

        def run(Y):
            B = Y.shape[0]
            t = reduce_phase(np.broadcast_to(np.asarray(tau, dtype=float), (B,)))
            e = _col(eps, B)
            x1 = np.concatenate([np.cos(t)[:, None], np.sin(t)[:, None], Y, e], axis=1)
            x0 = np.concatenate([np.ones((B, 1)), np.zeros((B, 1)), Y, e], axis=1)
            return self.nets[name](x1) - self.nets[name](x0)

        return _unbatched(run, y)

    def flow(self, y, h, eps):
        self._require("autonomous")
        return _unbatched(lambda Y: self.flow_vjp(Y, h, eps)[0], y)

    # checkpoint I/O

    def to_dict(self, metadata=None):
        return {
            "format": CHECKPOINT_FORMAT,
            "mode": self.mode,
            "problem": self.problem.name,
            "nets": {k: n.to_dict() for k, n in self.nets.items()},
            "metadata": metadata or {},
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != CHECKPOINT_FORMAT:
            raise FormatError(f"unsupported checkpoint format {d.get('format')!r}")
        nets = {k: Mlp.from_dict(v) for k, v in d["nets"].items()}
        return cls(d["mode"], get_problem(d["problem"]), nets)


def _col(v, B):
    return np.broadcast_to(np.asarray(v, dtype=float).reshape(-1, 1) if np.ndim(v) else np.asarray(v, dtype=float),
                           (B, 1))


def _unbatched(fn, y):
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        return fn(y[None, :])[0]
    return fn(y)


def _average_vjp(problem, y, g):
    if problem.average_jacobian is not None:
        J = problem.average_jacobian(y)
    else:
        from .averaging import jacobian_fd
        J = jacobian_fd(problem.average, y)
    return np.einsum("bij,bi->bj", J, g)


def save_checkpoint(path, nets: StructuredNetSet, metadata=None):
    from .io import atomic_write_text
    atomic_write_text(path, json.dumps(nets.to_dict(metadata), indent=1, sort_keys=True) + "\n")


def load_checkpoint(path):
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"checkpoint is not valid JSON: {exc.msg}", line=exc.lineno) from None
    return StructuredNetSet.from_dict(d), d.get("metadata", {})


def eval_F_theta(nets: StructuredNetSet, y, h, eps):
    return nets.F(y, h, eps)


def eval_phi_theta(nets: StructuredNetSet, sign, tau, y, eps):
    return nets.phi(sign, tau, y, eps)
