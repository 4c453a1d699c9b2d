"""Frozen-system analysis: equilibria, periodic orbits, Floquet structure.

The planar oscillator x' = F(x) with F(z) = (a + i w) z - b |z|^2 z + |z|^4 z
has, for 0 < a < b^2/4, a stable and an unstable circular periodic orbit.
Shifted copies of these live in the extended phase space as invariant circles
in the planes Lambda = 0 (past limit) and Lambda = lambda_max (future limit),
together with the equilibria Z- = (0,0,0) and Z+ = (lambda_max, 0, lambda_max).

This module computes their radii, eigen-structure, and Floquet
multipliers/eigendirection bundles, both in closed form (the linearization
around a circular orbit is solvable exactly) and through a multiple-shooting
eigenvalue boundary-value problem seeded from the monodromy matrix, so each
route validates the other.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from . import backend
from .bvp import BvpProblem, Segment, solve as bvp_solve
from .model import SystemParams, extended_field

__all__ = [
    "FrozenPeriodicOrbit",
    "FloquetMode",
    "FloquetData",
    "OrbitFrame",
    "EquilibriumData",
    "orbit_radii",
    "frozen_orbit",
    "lambda_mode_shape",
    "analytic_multipliers",
    "orbit_frame",
    "monodromy",
    "floquet",
    "equilibrium_data",
]


def orbit_radii(a: float, b: float = 1.0) -> tuple[float, float]:
    """Squared radii (R_s, R_u) of the stable and unstable periodic orbits.

    Both are roots of a - u b + u^2 = 0; with b = 1 they are
    R_s = (1 - sqrt(1 - 4a))/2 and R_u = (1 + sqrt(1 - 4a))/2.  Outside
    0 < a < b^2/4 the orbits do not coexist and a domain error names the
    bifurcation at the offending end.
    """
    if b <= 0:
        raise ValueError("b must be positive")
    if a <= 0:
        raise ValueError(
            f"a = {a} <= 0: stable orbit collapses in the Hopf bifurcation at a = 0")
    lim = b * b / 4.0
    # the fold point a = b^2/4 itself is admitted (both radii equal b/2)
    if a > lim:
        raise ValueError(
            f"a = {a} > b^2/4 = {lim}: orbits merge in the fold of limit "
            "cycles at a = b^2/4")
    root = np.sqrt(b * b - 4.0 * a)
    return (b - root) / 2.0, (b + root) / 2.0


@dataclass(frozen=True)
class FrozenPeriodicOrbit:
    """Circle of squared radius u centered at (lam, 0) in the plane Lambda=plane.

    Parameterized by g(theta) = (lam + rho cos(theta), rho sin(theta), plane)
    with rho = sqrt(squared_radius).
    """

    lam: float
    squared_radius: float
    stability: Literal["stable", "unstable"]
    period: float
    plane: float

    @property
    def radius(self) -> float:
        return float(np.sqrt(self.squared_radius))

    def point(self, theta: float) -> np.ndarray:
        rho = self.radius
        return np.array([self.lam + rho * np.cos(theta),
                         rho * np.sin(theta), self.plane])

    def tangent(self, theta: float, omega: float) -> np.ndarray:
        """Velocity of the orbit at phase theta (d/dt of point(theta + omega t))."""
        rho = self.radius
        return np.array([-rho * omega * np.sin(theta),
                         rho * omega * np.cos(theta), 0.0])

    def validate(self, params: SystemParams) -> None:
        a, b = params.a, params.b
        u = self.squared_radius
        if abs(a - u * b + u * u) > 1e-10:
            raise ValueError("squared_radius does not solve a - u b + u^2 = 0")
        stable = u < b / 2.0
        if stable != (self.stability == "stable"):
            raise ValueError("stability flag inconsistent with squared_radius")


def frozen_orbit(params: SystemParams,
                 stability: Literal["stable", "unstable"],
                 level: Literal["past", "future"]) -> FrozenPeriodicOrbit:
    """Embedded frozen orbit at the past (Lambda=0) or future (Lambda=lambda_max) level."""
    u_s, u_u = orbit_radii(params.a, params.b)
    u = u_s if stability == "stable" else u_u
    lam = 0.0 if level == "past" else params.lambda_max
    return FrozenPeriodicOrbit(lam=lam, squared_radius=u, stability=stability,
                               period=2.0 * np.pi / abs(params.omega), plane=lam)


# -- closed-form Floquet structure ---------------------------------------

def _radial_exponent(u: float, b: float) -> float:
    # linearize udot = 2u(a - b u + u^2) about the root u
    return 2.0 * u * (2.0 * u - b)


def _lambda_exponent(plane: float, params: SystemParams) -> float:
    return params.r * (params.lambda_max - 2.0 * plane)


def lambda_mode_shape(orbit: FrozenPeriodicOrbit,
                      params: SystemParams) -> tuple[complex, complex]:
    """Coefficients (alpha, gamma) of the Lambda-direction Floquet mode.

    The Floquet solution with exponent m = r(lambda_max - 2 plane) (the
    Lambda-direction rate at the orbit's invariant plane) has the form
    (eta(theta), 1) e^{m t} in (z, Lambda) coordinates with
    eta(theta) = alpha + gamma e^{2 i theta}: substituting into the
    variational equation reduces it to the 2x2 linear system

        [K - m + i w,  K          ] [alpha      ]   [K + i w]
        [K,            K - m + i w] [conj(gamma)] = [K      ]

    where K = u (2u - b) is half the radial Floquet exponent.
    """
    u = orbit.squared_radius
    kk = u * (2.0 * u - params.b)
    m = _lambda_exponent(orbit.plane, params)
    a1 = kk - m + 1j * params.omega
    mat = np.array([[a1, kk], [kk, a1]], dtype=complex)
    rhs = np.array([kk + 1j * params.omega, kk], dtype=complex)
    alpha, gamma_bar = np.linalg.solve(mat, rhs)
    return complex(alpha), complex(np.conj(gamma_bar))


def analytic_multipliers(orbit: FrozenPeriodicOrbit,
                         params: SystemParams) -> tuple[float, float, float]:
    """(beta_s, beta_c, beta_u): Floquet multipliers sorted by magnitude.

    The radial direction contributes exp(2u(2u-b) T) and the decoupled
    Lambda direction exp(r(lambda_max - 2 plane) T); the phase direction is
    neutral.
    """
    t_orbit = orbit.period
    b_rad = float(np.exp(_radial_exponent(orbit.squared_radius, params.b) * t_orbit))
    b_lam = float(np.exp(_lambda_exponent(orbit.plane, params) * t_orbit))
    lo, hi = sorted((b_rad, b_lam))
    return lo, 1.0, hi


@dataclass(frozen=True)
class OrbitFrame:
    """Floquet eigendirections at one orbit point, right and left.

    ``right`` holds the stable, center, unstable directions as columns (in
    that order); ``left`` holds the dual basis as rows, so that
    left @ right = identity.  ``multipliers`` are the matching
    (beta_s, 1, beta_u).  Left rows solve the adjoint variational equation
    with reciprocal multipliers.
    """

    theta: float
    right: np.ndarray
    left: np.ndarray
    multipliers: tuple[float, float, float]


def orbit_frame(orbit: FrozenPeriodicOrbit, params: SystemParams,
                theta: float) -> OrbitFrame:
    """Exact Floquet frame of an embedded frozen orbit at phase theta."""
    c, s = np.cos(theta), np.sin(theta)
    alpha, gamma = lambda_mode_shape(orbit, params)
    eta = alpha + gamma * np.exp(2j * theta)
    e1, e2 = float(np.real(eta)), float(np.imag(eta))

    radial = np.array([c, s, 0.0])
    tangent = np.array([-s, c, 0.0])
    lam_mode = np.array([e1, e2, 1.0])
    # dual rows: block-triangular inverse of [[rot, eta], [0, 1]]
    radial_left = np.array([c, s, -(c * e1 + s * e2)])
    tangent_left = np.array([-s, c, s * e1 - c * e2])
    lam_left = np.array([0.0, 0.0, 1.0])

    t_orbit = orbit.period
    b_rad = float(np.exp(_radial_exponent(orbit.squared_radius, params.b) * t_orbit))
    b_lam = float(np.exp(_lambda_exponent(orbit.plane, params) * t_orbit))
    if b_rad < b_lam:
        right = np.column_stack([radial, tangent, lam_mode])
        left = np.vstack([radial_left, tangent_left, lam_left])
        mult = (b_rad, 1.0, b_lam)
    else:
        right = np.column_stack([lam_mode, tangent, radial])
        left = np.vstack([lam_left, tangent_left, radial_left])
        mult = (b_lam, 1.0, b_rad)
    return OrbitFrame(theta=float(theta), right=right, left=left, multipliers=mult)


# -- monodromy and the eigenvalue boundary-value problem ------------------

def _kernel_args(params: SystemParams):
    return params.a, params.b, params.omega, params.r, params.lambda_max


def monodromy(orbit: FrozenPeriodicOrbit, params: SystemParams,
              theta0: float = 0.0, rel_tol: float = 1e-12,
              abs_tol: float = 1e-14) -> np.ndarray:
    """Fundamental solution over one period from phase theta0 (3x3 matrix)."""
    orbit.validate(params)
    y0 = np.empty(12)
    y0[:3] = orbit.point(theta0)
    y0[3:] = np.eye(3).ravel(order="F")
    y, status, _ = backend.integrate_endpoint(
        backend.SYS_VARIATIONAL, *_kernel_args(params), y0, orbit.period,
        rel_tol, abs_tol, np.inf, 1e6)
    if status != 0:
        raise RuntimeError(f"monodromy integration failed (status {status})")
    return y[3:].reshape(3, 3, order="F")


@dataclass(frozen=True)
class FloquetMode:
    """One Floquet pair: multiplier and eigendirection mesh over s in [0,1]."""

    beta: float
    mesh: np.ndarray  # (n_points, 3), mesh[k] at s = s_grid[k]


@dataclass(frozen=True)
class FloquetData:
    orbit: FrozenPeriodicOrbit
    s_grid: np.ndarray
    stable: FloquetMode
    center: FloquetMode
    unstable: FloquetMode

    @property
    def multipliers(self) -> tuple[float, float, float]:
        return self.stable.beta, self.center.beta, self.unstable.beta


def _variational_flow(params: SystemParams, t_seg: float):
    """Flow map for the combined (orbit point, tangent vector) 6-vector."""
    args = _kernel_args(params)

    def flow(y: np.ndarray, p: np.ndarray, ds: float) -> np.ndarray:
        y0 = np.zeros(12)
        y0[:6] = y
        out, status, _ = backend.integrate_endpoint(
            backend.SYS_VARIATIONAL, *args, y0, t_seg * ds,
            1e-12, 1e-14, np.inf, 1e6)
        if status != 0:
            raise RuntimeError(f"variational flow failed (status {status})")
        return out[:6]

    return flow


def _polish_mode(orbit: FrozenPeriodicOrbit, params: SystemParams,
                 beta0: float, v0: np.ndarray, n_nodes: int,
                 tol: float) -> FloquetMode:
    """Multiple-shooting solve of v' = T J(g) v, v(1) = beta v(0), |v(0)| = 1."""
    t_orbit = orbit.period
    w0 = orbit.point(0.0)
    flow = _variational_flow(params, t_orbit)
    seg = Segment(flow=flow, dim=6, n_nodes=n_nodes)

    def boundary(ends, p):
        (y_start, y_end), = ends
        return np.concatenate([
            y_start[:3] - w0,                      # base point pinned on the orbit
            y_end[3:] - p[0] * y_start[3:],        # eigen condition v(1) = beta v(0)
            [y_start[3:] @ y_start[3:] - 1.0],     # |v(0)| = 1
        ])
    problem = BvpProblem([seg], 1, boundary, 7)

    v0 = np.asarray(v0, float)
    v0 = v0 / np.linalg.norm(v0)

    # guess mesh: propagate the monodromy eigenvector along the orbit
    nodes = np.empty((n_nodes, 6))
    y = np.concatenate([w0, v0])
    nodes[0] = y
    for k in range(1, n_nodes):
        y = flow(y, np.empty(0), 1.0 / n_nodes)
        nodes[k] = y
    guess = problem.pack([nodes], [beta0])
    sol = bvp_solve(problem, guess, tol=tol, max_iter=30)

    node_states = sol.nodes(0)
    end = problem.segment_endpoints(sol.u)[0][1]
    mesh = np.vstack([node_states[:, 3:], end[3:]])
    beta = float(sol.params[0])
    # sign convention: first component of the s=0 direction positive
    pivot = mesh[0, 0] if abs(mesh[0, 0]) > 1e-10 else mesh[0, np.argmax(np.abs(mesh[0]))]
    if pivot < 0:
        mesh = -mesh
    return FloquetMode(beta=beta, mesh=mesh)


def floquet(orbit: FrozenPeriodicOrbit, params: SystemParams,
            n_nodes: int = 10, tol: float = 1e-10) -> FloquetData:
    """Floquet multipliers and eigendirection meshes of an embedded orbit.

    The stable and unstable pairs are solved as multiple-shooting eigenvalue
    problems seeded from the monodromy matrix; the neutral center pair is
    pinned to the normalized orbit tangent with multiplier exactly 1.
    """
    orbit.validate(params)
    mono = monodromy(orbit, params)
    eigvals, eigvecs = np.linalg.eig(mono)
    order = np.argsort(np.abs(eigvals))
    eigvals, eigvecs = eigvals[order], eigvecs[:, order]
    if np.max(np.abs(np.imag(eigvals))) > 1e-8:
        raise RuntimeError("complex monodromy spectrum; expected three real multipliers")
    eigvals = np.real(eigvals)
    eigvecs = np.real(eigvecs)

    s_grid = np.linspace(0.0, 1.0, n_nodes + 1)
    modes = {}
    for label, idx in (("stable", 0), ("unstable", 2)):
        modes[label] = _polish_mode(orbit, params, float(eigvals[idx]),
                                    eigvecs[:, idx], n_nodes, tol)

    tangents = np.array([orbit.tangent(2.0 * np.pi * s, params.omega)
                         for s in s_grid])
    tangents /= np.linalg.norm(tangents[0])
    center = FloquetMode(beta=1.0, mesh=tangents)

    return FloquetData(orbit=orbit, s_grid=s_grid, stable=modes["stable"],
                       center=center, unstable=modes["unstable"])


# -- equilibria -----------------------------------------------------------

@dataclass(frozen=True)
class EquilibriumData:
    """Eigen-structure of Z- or Z+ in the extended system.

    The (x, y) plane carries the focus pair a +- i omega (unstable for
    a > 0 at both equilibria); the remaining axis eigenvalue is
    r lambda_max at Z- and -r lambda_max at Z+.  Right and left bases are
    both provided so projection conditions can be formed either way;
    left_focus rows annihilate right_axis and vice versa.
    """

    location: np.ndarray
    eigenvalues: np.ndarray            # (focus+, focus-, axis)
    right_focus: np.ndarray            # (3, 2) real basis of the focus plane
    right_axis: np.ndarray             # (3,)
    left_focus: np.ndarray             # (2, 3) dual rows
    left_axis: np.ndarray              # (3,)
    axis_eigenvalue: float

    @property
    def stable_direction(self) -> np.ndarray | None:
        return self.right_axis if self.axis_eigenvalue < 0 else None

    @property
    def unstable_basis(self) -> np.ndarray:
        return self.right_focus


def equilibrium_data(which: Literal["past", "future"],
                     params: SystemParams) -> EquilibriumData:
    """Closed-form eigen-decomposition at Z- (past) or Z+ (future)."""
    a, om = params.a, params.omega
    lmax = params.lambda_max
    plane = 0.0 if which == "past" else lmax
    s3 = params.r * (lmax - 2.0 * plane)
    loc = np.array([plane, 0.0, plane])

    d = (a - s3) ** 2 + om * om
    v1 = (a * (a - s3) + om * om) / d
    v2 = -om * s3 / d
    right_axis = np.array([v1, v2, 1.0])
    right_focus = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    left_axis = np.array([0.0, 0.0, 1.0])
    left_focus = np.array([[1.0, 0.0, -v1], [0.0, 1.0, -v2]])

    return EquilibriumData(
        location=loc,
        eigenvalues=np.array([a + 1j * om, a - 1j * om, s3 + 0j]),
        right_focus=right_focus,
        right_axis=right_axis,
        left_focus=left_focus,
        left_axis=left_axis,
        axis_eigenvalue=float(s3),
    )
