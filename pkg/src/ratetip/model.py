"""Vector fields and Jacobians for the parameter-shift oscillator.

The frozen system is a planar oscillator in Bautin normal form,

    F(z) = (a + i*omega) z - b |z|^2 z + |z|^4 z,   z complex,

whose attracting state is shifted by an external parameter ``Lambda``:
``dz/dt = F(z - Lambda)``.  The shift follows the logistic ramp
``dLambda/dt = r Lambda (lambda_max - Lambda)``, which runs monotonically
from 0 in the far past to ``lambda_max`` in the far future.  Appending
``Lambda`` as a third coordinate gives the autonomous extended system on
``(x, y, Lambda)`` that everything downstream works with.

Complex arithmetic is carried out on explicit ``(x, y)`` pairs so that the
extended Jacobian is a plain real 3x3 matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SystemParams",
    "ExtendedState",
    "parameter_shift",
    "shift_travel_time",
    "bautin_field",
    "frozen_field",
    "extended_field",
    "jacobian",
    "adjoint_field",
]


@dataclass(frozen=True)
class SystemParams:
    """Parameters of the extended system.

    Attributes
    ----------
    a : float
        Linear growth rate of the focus; periodic orbits exist for
        ``0 < a < b**2/4``.
    b : float
        Cubic coefficient (positive; kept symbolic rather than fixed to 1).
    omega : float
        Angular frequency of the frozen oscillation.
    r : float
        Rate of the parameter shift (positive).
    lambda_max : float
        Total magnitude of the shift.
    """

    a: float = 0.1
    b: float = 1.0
    omega: float = 3.0
    r: float = 0.1
    lambda_max: float = 8.0

    def __post_init__(self):
        if not self.b > 0:
            raise ValueError(f"b must be positive, got {self.b}")
        if self.omega == 0:
            raise ValueError("omega must be nonzero")
        if not self.r > 0:
            raise ValueError(f"r must be positive, got {self.r}")
        if not self.lambda_max > 0:
            raise ValueError(f"lambda_max must be positive, got {self.lambda_max}")

    def replace(self, **kw) -> "SystemParams":
        d = {
            "a": self.a,
            "b": self.b,
            "omega": self.omega,
            "r": self.r,
            "lambda_max": self.lambda_max,
        }
        d.update(kw)
        return SystemParams(**d)


@dataclass
class ExtendedState:
    """A point ``(x, y, Lambda)`` of the extended phase space."""

    x: float
    y: float
    Lambda: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.Lambda], dtype=float)

    @staticmethod
    def from_array(w) -> "ExtendedState":
        return ExtendedState(float(w[0]), float(w[1]), float(w[2]))

    @property
    def z(self) -> complex:
        return complex(self.x, self.y)


def parameter_shift(tau, lambda_max: float = 8.0):
    """Closed-form shift profile ``lambda_max * (tanh(tau*lambda_max/2) + 1) / 2``.

    Evaluated at ``tau = r*t`` this is the solution of
    ``dLambda/dt = r Lambda (lambda_max - Lambda)`` through
    ``Lambda(0) = lambda_max/2``.  Accepts scalars or arrays.
    """
    return lambda_max * (np.tanh(np.asarray(tau, dtype=float) * lambda_max / 2.0) + 1.0) / 2.0


def shift_travel_time(lam_from: float, lam_to: float, r: float, lambda_max: float) -> float:
    """Time for the shift ODE to run from ``lam_from`` to ``lam_to``.

    Both values must lie strictly inside ``(0, lambda_max)``; the result is
    negative when ``lam_to < lam_from``.
    """
    for lam in (lam_from, lam_to):
        if not 0.0 < lam < lambda_max:
            raise ValueError(f"shift level {lam} outside (0, {lambda_max})")
    logit = lambda lam: np.log(lam / (lambda_max - lam))
    return float((logit(lam_to) - logit(lam_from)) / (r * lambda_max))


def bautin_field(z: complex, params: SystemParams) -> complex:
    """Frozen vector field ``F(z)`` of the planar normal form at the origin."""
    u = abs(z) ** 2
    return (params.a + 1j * params.omega) * z - params.b * u * z + u * u * z


def frozen_field(z: complex, lam: float, params: SystemParams) -> complex:
    """Frozen system at shift level ``lam``: ``dz/dt = F(z - lam)``."""
    return bautin_field(z - lam, params)


def extended_field(w, params: SystemParams) -> np.ndarray:
    """Right-hand side of the autonomous extended system at ``w = (x, y, Lambda)``."""
    x, y, lam = float(w[0]), float(w[1]), float(w[2])
    p = x - lam
    u = p * p + y * y
    g = params.a - params.b * u + u * u
    om = params.omega
    return np.array(
        [
            g * p - om * y,
            om * p + g * y,
            params.r * lam * (params.lambda_max - lam),
        ]
    )


def jacobian(w, params: SystemParams) -> np.ndarray:
    """Real 3x3 Jacobian of the extended field at ``w``.

    The upper-left 2x2 block is the derivative of the frozen field; the
    ``Lambda`` column of the first two rows is minus that derivative applied
    to ``(1, 0)``, and the last row is ``(0, 0, r*(lambda_max - 2*Lambda))``.
    """
    x, y, lam = float(w[0]), float(w[1]), float(w[2])
    p = x - lam
    u = p * p + y * y
    g = params.a - params.b * u + u * u
    dg = -params.b + 2.0 * u
    om = params.omega
    j00 = g + 2.0 * p * p * dg
    j01 = 2.0 * p * y * dg - om
    j10 = om + 2.0 * p * y * dg
    j11 = g + 2.0 * y * y * dg
    return np.array(
        [
            [j00, j01, -j00],
            [j10, j11, -j10],
            [0.0, 0.0, params.r * (params.lambda_max - 2.0 * lam)],
        ]
    )


def adjoint_field(w, u_vec, params: SystemParams) -> np.ndarray:
    """Adjoint variational field ``du/dt = -J(w)^T u`` along a base point ``w``."""
    return -jacobian(w, params).T @ np.asarray(u_vec, dtype=float)
