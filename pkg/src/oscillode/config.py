"""Run configuration: a JSON document with a "math" and an "ml" section.

Validation collects every violation before raising, and unknown keys are
errors so that typos never fall back to defaults silently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

from .errors import FormatError, ValidationError
from .integrators import OneStepMethod
from .problems import CATALOG

_MATH_KEYS = {"problem", "method", "h_range", "eps_range", "T", "h", "eps_list", "y0", "k", "eta", "rtol", "atol"}
_ML_KEYS = {"omega", "K", "train_fraction", "batch", "layers", "neurons", "lr", "wd", "epochs", "seed", "modes"}
_TOP_KEYS = {"name", "description", "math", "ml"}


@dataclass
class RunConfig:
    problem: str
    method: str = "forward-euler"
    h_range: tuple = (1e-3, 1e-1)
    eps_range: tuple = (1e-3, 1.0)
    T: float = 1.0
    h: list = field(default_factory=lambda: [0.01])
    eps_list: list = field(default_factory=lambda: [5e-2])
    y0: list = field(default_factory=lambda: [0.5, -0.5])
    k: int = 1
    eta: float = 1e-5
    rtol: float = 1e-10
    atol: float = 1e-12
    omega: list = field(default_factory=lambda: [[-2.0, 2.0], [-2.0, 2.0]])
    K: int = 5000
    train_fraction: float = 0.8
    batch: int = 100
    layers: int = 1
    neurons: int = 32
    lr: float = 2e-3
    wd: float = 1e-9
    epochs: int = 50
    seed: int | None = None
    modes: list = field(default_factory=lambda: ["classical"])
    name: str = ""

    @property
    def hidden(self):
        return (self.neurons,) * self.layers

    @property
    def one_step(self) -> OneStepMethod:
        return OneStepMethod(self.method)

    def h_for(self, eps) -> float:
        """Step size paired with a simulation eps (single h, or one per eps)."""
        if len(self.h) == 1:
            return self.h[0]
        return self.h[self.eps_list.index(eps)]


def _num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _pair(v):
    return isinstance(v, list) and len(v) == 2 and all(_num(x) for x in v) and v[0] < v[1]


def validate(doc) -> RunConfig:
    """Validate a parsed document; raise ValidationError listing everything wrong."""
    bad = []
    if not isinstance(doc, dict):
        raise ValidationError(["config must be a JSON object"])
    for k in sorted(set(doc) - _TOP_KEYS):
        bad.append(f"unknown key: {k}")
    math = doc.get("math", {})
    ml = doc.get("ml", {})
    for sec_name, sec, keys in (("math", math, _MATH_KEYS), ("ml", ml, _ML_KEYS)):
        if not isinstance(sec, dict):
            bad.append(f"{sec_name}: must be an object")
            continue
        for k in sorted(set(sec) - keys):
            bad.append(f"unknown key: {sec_name}.{k}")
    if not isinstance(math, dict):
        math = {}
    if not isinstance(ml, dict):
        ml = {}

    out = {}
    p = math.get("problem")
    if p is None:
        bad.append("missing required: problem")
    elif p not in CATALOG:
        bad.append(f"problem: unknown {p!r} (choose from {sorted(CATALOG)})")
    else:
        out["problem"] = p

    if "method" in math:
        m = math["method"]
        if m not in ("euler", "forward-euler", "midpoint"):
            bad.append(f"method: unknown {m!r}")
        else:
            out["method"] = OneStepMethod(m).kind
    for key in ("h_range", "eps_range"):
        if key in math:
            v = math[key]
            if not _pair(v) or v[0] <= 0:
                bad.append(f"{key}: need [lo, hi] with 0 < lo < hi")
            elif key == "eps_range" and v[1] > 1:
                bad.append("eps_range: upper end must be <= 1")
            else:
                out[key] = tuple(float(x) for x in v)
    if "T" in math:
        if not _num(math["T"]) or math["T"] <= 0:
            bad.append("T: must be a positive number")
        else:
            out["T"] = float(math["T"])
    if "h" in math:
        h = math["h"]
        hs = h if isinstance(h, list) else [h]
        if not hs or not all(_num(x) and x > 0 for x in hs):
            bad.append("h: must be positive")
        else:
            out["h"] = [float(x) for x in hs]
    if "eps_list" in math:
        e = math["eps_list"]
        if not isinstance(e, list) or not e or not all(_num(x) and 0 < x <= 1 for x in e):
            bad.append("eps_list: need a nonempty list of values in (0, 1]")
        else:
            out["eps_list"] = [float(x) for x in e]
    if "h" in out and len(out["h"]) > 1 and len(out["h"]) != len(out.get("eps_list", [])):
        bad.append("h: a list of step sizes must pair one-to-one with eps_list")
    if "y0" in math:
        y = math["y0"]
        if not isinstance(y, list) or not y or not all(_num(x) for x in y):
            bad.append("y0: need a list of numbers")
        else:
            out["y0"] = [float(x) for x in y]
    if "k" in math:
        if math["k"] not in (0, 1) or isinstance(math["k"], bool):
            bad.append("k: truncation order must be 0 or 1")
        else:
            out["k"] = int(math["k"])
    for key in ("eta", "rtol", "atol"):
        if key in math:
            if not _num(math[key]) or math[key] <= 0:
                bad.append(f"{key}: must be positive")
            else:
                out[key] = float(math[key])

    if "omega" in ml:
        om = ml["omega"]
        if not isinstance(om, list) or not om or not all(_pair(b) for b in om):
            bad.append("omega: need a list of [lo, hi] intervals")
        else:
            out["omega"] = [[float(a), float(b)] for a, b in om]
    for key in ("K", "batch", "layers", "neurons", "epochs"):
        if key in ml:
            if not _int(ml[key]) or ml[key] < 1:
                bad.append(f"{key}: must be a positive integer")
            else:
                out[key] = ml[key]
    if "train_fraction" in ml:
        tf = ml["train_fraction"]
        if not _num(tf) or not 0 < tf <= 1:
            bad.append("train_fraction: must lie in (0, 1]")
        else:
            out["train_fraction"] = float(tf)
    for key in ("lr", "wd"):
        if key in ml:
            if not _num(ml[key]) or ml[key] < 0:
                bad.append(f"{key}: must be non-negative")
            else:
                out[key] = float(ml[key])
    if "seed" not in ml:
        bad.append("missing required: seed")
    elif not _int(ml["seed"]) or ml["seed"] < 0:
        bad.append("seed: must be a non-negative integer")
    else:
        out["seed"] = ml["seed"]
    if "modes" in ml:
        md = ml["modes"]
        if not isinstance(md, list) or not md or not set(md) <= {"classical", "autonomous"}:
            bad.append("modes: need a nonempty subset of ['classical', 'autonomous']")
        else:
            out["modes"] = list(md)
    if "name" in doc:
        out["name"] = str(doc["name"])

    if "y0" in out and "omega" in out and len(out["y0"]) != len(out["omega"]):
        bad.append("y0: dimension does not match omega")
    if bad:
        raise ValidationError(bad)
    return RunConfig(**out)


def parse_config(text: str) -> RunConfig:
    if not text.strip():
        return validate({})
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"config is not valid JSON: {exc.msg}", line=exc.lineno) from None
    return validate(doc)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def preset_names():
    return sorted(p.name[:-5] for p in resources.files("oscillode.presets").iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> RunConfig:
    res = resources.files("oscillode.presets") / f"{name}.json"
    if not res.is_file():
        raise ValidationError([f"unknown preset {name!r}; available: {preset_names()}"])
    return parse_config(res.read_text())
