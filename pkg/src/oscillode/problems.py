"""Benchmark highly oscillatory systems y' = f(t/eps, y).

Every field is vectorised: ``tau`` broadcasts against the leading axes of
``y`` (shape ``(..., d)``) and the result has the shape of ``y``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DomainError

TWO_PI = 2.0 * np.pi


def reduce_phase(tau):
    """Map ``tau`` into [0, 2pi).

    ``fmod`` is exact in floating point, so large phases such as t/eps at
    eps=1e-3 keep all of the digits they carry.
    """
    r = np.fmod(tau, TWO_PI)
    return np.where(r < 0.0, r + TWO_PI, r)


def rotation(tau):
    """S(tau) = [[cos, -sin], [sin, cos]], broadcast over ``tau``."""
    c, s = np.cos(tau), np.sin(tau)
    return np.stack([np.stack([c, -s], axis=-1), np.stack([s, c], axis=-1)], axis=-2)


@dataclass(frozen=True)
class AutonomousSplit:
    """y' = A y / eps + g(y), with A generating a 2pi-periodic flow."""

    A: np.ndarray
    g: Callable[[np.ndarray], np.ndarray]
    expm: Callable  # tau -> exp(tau A), shape (..., d, d)


@dataclass(frozen=True)
class OscillatoryProblem:
    name: str
    dim: int
    field: Callable  # (tau, y) -> f(tau, y), tau already reduced
    average: Callable  # y -> <f>(y)
    average_jacobian: Optional[Callable] = None  # y -> d<f>/dy, shape (..., d, d)
    split: Optional[AutonomousSplit] = None
    period: float = TWO_PI

    def f(self, tau, y):
        return self.field(reduce_phase(tau), y)

    def rhs(self, t, y, eps):
        """Right-hand side in physical time for the classical form."""
        return self.field(reduce_phase(np.asarray(t) / eps), y)

    def autonomous_rhs(self, t, y, eps):
        """Right-hand side A y / eps + g(y) of the autonomous form."""
        if self.split is None:
            raise DomainError(f"problem {self.name!r} has no autonomous form")
        return np.einsum("ij,...j->...i", self.split.A, y) / np.asarray(eps)[..., None] + self.split.g(y)


# --- inverted pendulum ---------------------------------------------------

def _pendulum_field(tau, y):
    y1, y2 = y[..., 0], y[..., 1]
    s = np.sin(tau)
    return np.stack(
        [
            y2 + s * np.sin(y1),
            np.sin(y1) - 0.5 * s * s * np.sin(2.0 * y1) - s * np.cos(y1) * y2,
        ],
        axis=-1,
    )


def _pendulum_average(y):
    y1, y2 = y[..., 0], y[..., 1]
    return np.stack([y2, np.sin(y1) - 0.25 * np.sin(2.0 * y1)], axis=-1)


def _pendulum_average_jacobian(y):
    y1 = y[..., 0]
    zero, one = np.zeros_like(y1), np.ones_like(y1)
    row1 = np.stack([zero, one], axis=-1)
    row2 = np.stack([np.cos(y1) - 0.5 * np.cos(2.0 * y1), zero], axis=-1)
    return np.stack([row1, row2], axis=-2)


# --- Van der Pol ----------------------------------------------------------

def _vdp_field(tau, y):
    y1, y2 = y[..., 0], y[..., 1]
    c, s = np.cos(tau), np.sin(tau)
    q = y1 * c + y2 * s
    p = -y1 * s + y2 * c
    common = (0.25 - q * q) * p
    return np.stack([-s * common, c * common], axis=-1)


def _vdp_average(y):
    r2 = np.sum(y * y, axis=-1, keepdims=True)
    return 0.125 * (1.0 - r2) * y


def _vdp_average_jacobian(y):
    r2 = np.sum(y * y, axis=-1)[..., None, None]
    eye = np.eye(y.shape[-1])
    return 0.125 * ((1.0 - r2) * eye - 2.0 * y[..., :, None] * y[..., None, :])


def _vdp_g(y):
    q, p = y[..., 0], y[..., 1]
    return np.stack([np.zeros_like(q), (0.25 - q * q) * p], axis=-1)


def _vdp_expm(tau):
    # exp(tau A) for A = [[0, 1], [-1, 0]] is S(tau)^T
    return np.swapaxes(rotation(np.asarray(tau, dtype=float)), -1, -2)


INVERTED_PENDULUM = OscillatoryProblem(
    name="inverted-pendulum",
    dim=2,
    field=_pendulum_field,
    average=_pendulum_average,
    average_jacobian=_pendulum_average_jacobian,
)

VAN_DER_POL = OscillatoryProblem(
    name="van-der-pol",
    dim=2,
    field=_vdp_field,
    average=_vdp_average,
    average_jacobian=_vdp_average_jacobian,
    split=AutonomousSplit(A=np.array([[0.0, 1.0], [-1.0, 0.0]]), g=_vdp_g, expm=_vdp_expm),
)

CATALOG = {p.name: p for p in (INVERTED_PENDULUM, VAN_DER_POL)}


def get_problem(name: str) -> OscillatoryProblem:
    try:
        return CATALOG[name]
    except KeyError:
        raise DomainError(f"unknown problem {name!r}; choose from {sorted(CATALOG)}") from None


def _finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise DomainError("non-finite input")


def eval_field(problem: OscillatoryProblem, tau, y) -> np.ndarray:
    """f(tau, y) with tau reduced modulo 2pi."""
    y = np.asarray(y, dtype=float)
    tau = np.asarray(tau, dtype=float)
    _finite(tau, y)
    return problem.f(tau, y)


def eval_average_field(problem: OscillatoryProblem, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    _finite(y)
    return problem.average(y)


def vdp_change_of_variables(direction: str, t, eps, state) -> np.ndarray:
    """Bridge between Van der Pol (q, p) and the transformed variables.

    ``forward`` maps (q, p) to y = S(t/eps)(q, p); ``inverse`` applies S^T.
    """
    if not np.all(np.asarray(eps) > 0):
        raise DomainError("eps must be positive")
    state = np.asarray(state, dtype=float)
    S = rotation(reduce_phase(np.asarray(t, dtype=float) / eps))
    if direction == "forward":
        return np.einsum("...ij,...j->...i", S, state)
    if direction == "inverse":
        return np.einsum("...ji,...j->...i", S, state)
    raise DomainError(f"direction must be 'forward' or 'inverse', got {direction!r}")
