"""Embedded Runge-Kutta 4(5) integration with dense output and plane events.

A Dormand-Prince pair drives the adaptive stepping; every accepted step
stores the state and derivative so trajectories can be evaluated anywhere
via cubic Hermite interpolation.  Integration runs forward or backward
depending on the ordering of ``t0`` and ``t1``.  An optional escape test
``(x - Lambda)^2 + y^2 >= escape_radius_sq`` terminates runs that leave
the region of interest of the extended system.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

__all__ = [
    "IntegratorConfig",
    "Trajectory",
    "IntegrationFailure",
    "integrate",
    "event_crossing",
]

# Dormand-Prince 5(4) tableau.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# Difference between the 5th and embedded 4th order weights.
_E = np.array(
    [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
)


@dataclass
class IntegratorConfig:
    rel_tol: float = 1e-9
    abs_tol: float = 1e-11
    max_step: float = np.inf
    escape_radius_sq: float = 4.0
    max_steps: int = 2_000_000

    def __post_init__(self) -> None:
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_step <= 0:
            raise ValueError("max_step must be positive")
        if self.escape_radius_sq <= 0:
            raise ValueError("escape_radius_sq must be positive")


class IntegrationFailure(RuntimeError):
    """Raised when the step size underflows or the step budget is exhausted.

    Carries the partial trajectory accumulated so far in ``trajectory``.
    """

    def __init__(self, message: str, trajectory: "Trajectory"):
        super().__init__(message)
        self.trajectory = trajectory


class Trajectory:
    """Accepted integration steps plus cubic-Hermite dense output.

    ``ts`` is strictly monotone (increasing for forward runs, decreasing
    for backward runs).  ``reason`` is one of ``"time"`` (requested end
    reached) or ``"escape"``.
    """

    def __init__(self, ts, states, derivs, reason: str):
        self.ts = np.asarray(ts, dtype=float)
        self.states = np.asarray(states, dtype=float)
        self.derivs = np.asarray(derivs, dtype=float)
        self.reason = reason

    @property
    def t_final(self) -> float:
        return float(self.ts[-1])

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1].copy()

    def _locate(self, t: float) -> int:
        ts = self.ts
        if ts[-1] >= ts[0]:
            k = int(np.searchsorted(ts, t, side="right")) - 1
        else:
            k = int(np.searchsorted(-ts, -t, side="right")) - 1
        return min(max(k, 0), len(ts) - 2)

    def __call__(self, t):
        """Dense evaluation at scalar or array ``t`` within the covered span."""
        if np.ndim(t) > 0:
            return np.array([self(float(ti)) for ti in np.asarray(t).ravel()])
        t = float(t)
        if len(self.ts) == 1:
            return self.states[0].copy()
        k = self._locate(t)
        t0, t1 = self.ts[k], self.ts[k + 1]
        h = t1 - t0
        s = (t - t0) / h
        y0, y1 = self.states[k], self.states[k + 1]
        f0, f1 = self.derivs[k], self.derivs[k + 1]
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        return h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1


def _error_norm(err, y_old, y_new, rtol, atol):
    scale = atol + rtol * np.maximum(np.abs(y_old), np.abs(y_new))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def _initial_step(f0, y0, direction, rtol, atol, max_step):
    scale = atol + rtol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    return direction * min(h, max_step, 1.0)


def _escaped(y, esc_sq) -> bool:
    dx = y[0] - y[2]
    return dx * dx + y[1] * y[1] >= esc_sq


def integrate(
    rhs: Callable[[np.ndarray], np.ndarray],
    w0,
    t0: float,
    t1: float,
    config: Optional[IntegratorConfig] = None,
    escape: bool = False,
) -> Trajectory:
    """Integrate the autonomous system ``dw/dt = rhs(w)`` from ``t0`` to ``t1``.

    Parameters
    ----------
    rhs : callable
        Vector field; called with the current state only.
    w0 : array_like
        Initial state at ``t0``.
    t0, t1 : float
        Time span; ``t1 < t0`` integrates backward.
    config : IntegratorConfig, optional
        Tolerances and limits.
    escape : bool
        Apply the ``(x - Lambda)^2 + y^2`` escape test to the first three
        state components after every accepted step.

    Returns
    -------
    Trajectory

    Raises
    ------
    IntegrationFailure
        On step-size underflow (e.g. finite-time blow-up) or when
        ``config.max_steps`` accepted/rejected steps are exhausted; the
        partial trajectory is attached to the exception.
    """
    if config is None:
        config = IntegratorConfig()
    y = np.asarray(w0, dtype=float).copy()
    t = float(t0)
    f = np.asarray(rhs(y), dtype=float)
    ts, states, derivs = [t], [y.copy()], [f.copy()]

    if t1 == t0:
        return Trajectory(ts, states, derivs, "time")
    direction = 1.0 if t1 > t0 else -1.0
    rtol, atol = config.rel_tol, config.abs_tol
    h = _initial_step(f, y, direction, rtol, atol, config.max_step)
    k = np.empty((7, y.size))
    n_steps = 0

    while direction * (t1 - t) > 0:
        n_steps += 1
        if n_steps > config.max_steps:
            raise IntegrationFailure(
                f"step budget {config.max_steps} exhausted at t={t}",
                Trajectory(ts, states, derivs, "time"),
            )
        if abs(h) < 1e-14 * max(1.0, abs(t)):
            raise IntegrationFailure(
                f"step size underflow at t={t}",
                Trajectory(ts, states, derivs, "time"),
            )
        if direction * (t + h - t1) > 0:
            h = t1 - t

        k[0] = f
        for i in range(1, 7):
            k[i] = rhs(y + h * (_A[i] @ k[:i]))
        y_new = y + h * (_B5 @ k)
        err = h * (_E @ k)
        en = _error_norm(err, y, y_new, rtol, atol)

        if en <= 1.0:
            t = t + h
            y = y_new
            f = k[6].copy()  # FSAL: k7 = rhs(y_new)
            ts.append(t)
            states.append(y.copy())
            derivs.append(f.copy())
            if escape and _escaped(y, config.escape_radius_sq):
                return Trajectory(ts, states, derivs, "escape")
            grow = 5.0 if en == 0.0 else min(5.0, max(0.2, 0.9 * en ** -0.2))
            h = direction * min(abs(h) * grow, config.max_step)
        else:
            h *= max(0.2, 0.9 * en ** -0.2)

    return Trajectory(ts, states, derivs, "time")


def event_crossing(
    trajectory: Trajectory,
    normal,
    offset: float,
    t_tol: float = 1e-10,
):
    """First crossing of the plane ``<w, normal> = offset`` along a trajectory.

    Scans the stored steps for a sign change of ``<w, normal> - offset`` and
    refines the crossing by bisection on the dense output until the time
    bracket is below ``t_tol``.  Returns ``(t_cross, w_cross)`` or ``None``
    if the plane is never crossed.
    """
    n = np.asarray(normal, dtype=float)
    g = trajectory.states @ n - offset
    if abs(g[0]) == 0.0:
        return float(trajectory.ts[0]), trajectory.states[0].copy()
    idx = np.nonzero(np.diff(np.sign(g)) != 0)[0]
    if idx.size == 0:
        return None
    k = int(idx[0])
    ta, tb = float(trajectory.ts[k]), float(trajectory.ts[k + 1])
    ga = float(g[k])
    while abs(tb - ta) > t_tol:
        tm = 0.5 * (ta + tb)
        gm = float(trajectory(tm) @ n - offset)
        if gm == 0.0:
            ta = tb = tm
            break
        if (gm > 0) == (ga > 0):
            ta, ga = tm, gm
        else:
            tb = tm
    t_cross = 0.5 * (ta + tb)
    return t_cross, trajectory(t_cross)
