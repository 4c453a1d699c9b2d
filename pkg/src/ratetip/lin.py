"""Lin's method for connecting orbits of the extended shift system.

Locates and continues orbits connecting the stable past periodic orbit to the
future attractor or to the future unstable periodic orbit:

* PtoE: from the past stable orbit to the future equilibrium Z+ (whose
  planar directions are unstable but whose Lambda-axis is attracting); its
  existence marks the transition between two stable-manifold topologies.
* PtoP, codimension zero: from the past stable orbit to the future unstable
  periodic orbit; these exist exactly in the partial-tipping regime.
* PtoP, codimension one: a tangent (non-transverse) PtoP connection,
  certified by an adjoint solution; solving for the rate r yields the
  critical rates bounding the partial-tipping window.

Both connection segments end on the section Sigma = {Lambda = lambda_max/2};
the mismatch there is confined to the Lin direction ell = (0, 1, 0) and its
signed magnitude xi ("Lin gap") vanishes exactly at true connections.

A decoupling fact shapes the formulation: Lambda obeys the closed logistic
equation, so pinning the section level ties the segment duration T to the
departure offset delta exactly, T = ln((lambda_max - delta)/delta) /
(r lambda_max).  The half time is therefore always derived from delta rather
than chosen freely, otherwise the departure and section conditions are
mutually unsatisfiable.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass
from typing import Literal

import numpy as np

from . import backend
from .bvp import (
    BvpProblem,
    BvpSolution,
    ContinuationBranch,
    NonConvergenceError,
    Segment,
    continue_solution,
    solve as bvp_solve,
)
from .frozen import equilibrium_data, frozen_orbit, orbit_frame
from .integrator import IntegratorConfig, integrate
from .model import SystemParams, extended_field, shift_travel_time

__all__ = [
    "LIN_BASIS",
    "SECTION_NORMAL",
    "LinSetup",
    "LinSolution",
    "ContinuationCurve",
    "BracketError",
    "gap_ptoe",
    "gap_ptop",
    "ptop_connection",
    "section_gap_profile",
    "continue_connection_in_r",
    "solve_codim1_ptop",
    "find_critical_rate",
    "continue_threshold",
]

SECTION_NORMAL = np.array([0.0, 0.0, 1.0])
LIN_BASIS = np.array([0.0, 1.0, 0.0])

_ESCAPE_SQ = 400.0  # generous: segments stay within |z - Lambda| << 20


class BracketError(ValueError):
    """Root bracket does not enclose a sign change of the Lin gap."""


@dataclass(frozen=True)
class LinSetup:
    """Geometry and solver settings shared by all Lin problems.

    The section is always {Lambda = lambda_max/2} with normal (0,0,1), and
    the Lin basis is ell = (0,1,0).  ``delta`` is the departure offset from
    the periodic orbit along its unstable direction; the per-segment
    integration time follows from it (see module docstring).

    ``projection`` selects the boundary-condition bases: "adjoint" uses the
    left (dual) Floquet/eigen bases so that annihilating the unstable and
    center duals places the offset exactly in the complementary subspace;
    "literal" uses plain inner products with the right eigenvectors.  The
    roots they produce differ by O(delta) at most.
    """

    delta: float = 1e-3
    projection: Literal["adjoint", "literal"] = "adjoint"
    n_nodes: int = 10
    tol: float = 1e-9
    rel_tol: float = 1e-11
    abs_tol: float = 1e-13

    def __post_init__(self) -> None:
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.projection not in ("adjoint", "literal"):
            raise ValueError("projection must be 'adjoint' or 'literal'")
        if self.n_nodes < 2:
            raise ValueError("need at least 2 shooting nodes per segment")

    def section_offset(self, params: SystemParams) -> float:
        return params.lambda_max / 2.0

    def half_time(self, params: SystemParams) -> float:
        """Segment duration tied to delta by the Lambda decoupling."""
        return shift_travel_time(self.delta, params.lambda_max / 2.0,
                                 params.r, params.lambda_max)


# -- geometry helpers -----------------------------------------------------

def _flow_factory(params: SystemParams, setup: LinSetup, kind: int,
                  r_index: int | None = None):
    """Flow map over a fraction of the half time; r optionally an unknown."""

    def flow(y: np.ndarray, p: np.ndarray, ds: float) -> np.ndarray:
        r = params.r if r_index is None else float(p[r_index])
        if not 0.0 < r < 10.0:
            raise RuntimeError(f"rate probe r = {r} out of range")
        pr = params.replace(r=r)
        t_half = setup.half_time(pr)
        out, status, _ = backend.integrate_endpoint(
            kind, pr.a, pr.b, pr.omega, pr.r, pr.lambda_max,
            np.asarray(y, dtype=float), t_half * ds,
            setup.rel_tol, setup.abs_tol, np.inf, _ESCAPE_SQ)
        if status != 0:
            raise RuntimeError(f"segment flow terminated early (status {status})")
        return out

    return flow


def departure_state(params: SystemParams, setup: LinSetup,
                    theta: float) -> np.ndarray:
    """w-(0): the past stable orbit at phase theta, offset by delta.

    With adjoint projections the offset is delta times the unstable Floquet
    direction (whose Lambda component is 1); with literal projections it is
    delta straight up the Lambda axis.  Either way its Lambda component is
    exactly delta, matching the flow time to the section.
    """
    orbit = frozen_orbit(params, "stable", "past")
    if setup.projection == "adjoint":
        fr = orbit_frame(orbit, params, theta)
        off = setup.delta * fr.right[:, 2]
    else:
        off = np.array([0.0, 0.0, setup.delta])
    return orbit.point(theta) + off


def arrival_state_ptop(params: SystemParams, setup: LinSetup,
                       phi: float) -> np.ndarray:
    """w+(1): the future unstable orbit at phase phi, offset below by delta."""
    orbit = frozen_orbit(params, "unstable", "future")
    if setup.projection == "adjoint":
        fr = orbit_frame(orbit, params, phi)
        off = -setup.delta * fr.right[:, 0]
    else:
        off = np.array([0.0, 0.0, -setup.delta])
    return orbit.point(phi) + off


def arrival_state_ptoe(params: SystemParams, setup: LinSetup) -> np.ndarray:
    """w+(1): the future equilibrium offset along its stable eigendirection."""
    eq = equilibrium_data("future", params)
    if setup.projection == "adjoint":
        off = -setup.delta * eq.right_axis
    else:
        off = np.array([0.0, 0.0, -setup.delta])
    return eq.location + off


def _departure_rows(params, setup, w_start, theta):
    orbit = frozen_orbit(params, "stable", "past")
    fr = orbit_frame(orbit, params, theta)
    off = w_start - orbit.point(theta)
    if setup.projection == "adjoint":
        return np.array([fr.left[0] @ off, fr.left[1] @ off])
    return np.array([fr.right[:, 0] @ off, fr.right[:, 1] @ off])


def _arrival_rows_ptop(params, setup, w_end, phi):
    orbit = frozen_orbit(params, "unstable", "future")
    fr = orbit_frame(orbit, params, phi)
    off = w_end - orbit.point(phi)
    if setup.projection == "adjoint":
        return np.array([fr.left[2] @ off, fr.left[1] @ off])
    return np.array([fr.right[:, 2] @ off, fr.right[:, 1] @ off])


def _arrival_rows_ptoe(params, setup, w_end):
    eq = equilibrium_data("future", params)
    off = w_end - eq.location
    if setup.projection == "adjoint":
        return eq.left_focus @ off
    return eq.right_focus.T @ off


def _adjoint_departure_rows(params, u_start, theta):
    # u-(0) orthogonal to the unstable and center directions (right bundle)
    orbit = frozen_orbit(params, "stable", "past")
    fr = orbit_frame(orbit, params, theta)
    return np.array([u_start @ fr.right[:, 2], u_start @ fr.right[:, 1]])


def _adjoint_arrival_rows(params, u_end, phi):
    # u+(1) orthogonal to the stable and center directions (right bundle)
    orbit = frozen_orbit(params, "unstable", "future")
    fr = orbit_frame(orbit, params, phi)
    return np.array([u_end @ fr.right[:, 0], u_end @ fr.right[:, 1]])


def _nodes_forward(flow, y0, n_nodes, p=()):
    p = np.asarray(p, dtype=float)
    nodes = np.empty((n_nodes, np.size(y0)))
    y = np.asarray(y0, dtype=float).copy()
    nodes[0] = y
    for k in range(1, n_nodes):
        y = flow(y, p, 1.0 / n_nodes)
        nodes[k] = y
    return nodes


def _nodes_backward_from(params, setup, w_end, n_nodes):
    """Sample the backward trajectory from an arrival state at the node mesh."""
    t_half = setup.half_time(params)
    cfg = IntegratorConfig(rel_tol=setup.rel_tol, abs_tol=setup.abs_tol,
                           escape_radius_sq=_ESCAPE_SQ)
    traj = integrate(lambda w: extended_field(w, params), w_end, 0.0, -t_half, cfg)
    nodes = np.empty((n_nodes, 3))
    for k in range(n_nodes):
        nodes[k] = traj(-t_half * (1.0 - k / n_nodes))
    return nodes


def _section_loops(params: SystemParams, setup: LinSetup, n_scan: int = 96):
    """Traces of both manifolds on the section.

    Returns (thetas, section points of W^u(past stable orbit)) and
    (phis, section points of W^s(future unstable orbit)), each sampled at
    n_scan phases.  In the partial-tipping regime part of the W^u tube blows
    up before reaching the section; those entries are NaN, so the first
    trace is in general an open arc while the second is always a closed
    loop.
    """
    t_half = setup.half_time(params)
    thetas = np.linspace(0.0, 2.0 * np.pi, n_scan, endpoint=False)
    phis = np.linspace(0.0, 2.0 * np.pi, n_scan, endpoint=False)
    dep = np.ascontiguousarray([departure_state(params, setup, th) for th in thetas])
    arr = np.ascontiguousarray([arrival_state_ptop(params, setup, ph) for ph in phis])
    args = (params.a, params.b, params.omega, params.r, params.lambda_max)
    c_minus, st1, _ = backend.ensemble_endpoints(
        *args, dep, t_half, setup.rel_tol, setup.abs_tol, np.inf, _ESCAPE_SQ)
    c_plus, st2, _ = backend.ensemble_endpoints(
        *args, arr, -t_half, setup.rel_tol, setup.abs_tol, np.inf, _ESCAPE_SQ)
    c_minus[st1 != 0] = np.nan
    if np.any(st2 != 0):
        raise RuntimeError("backward section-loop integration failed")
    if not np.any(st1 == 0):
        raise RuntimeError(
            "the whole W^u tube blows up before the section (total tipping)")
    return thetas, c_minus, phis, c_plus


def _segments_cross(p1, p2, q1, q2):
    """Intersection of planar segments p1p2 and q1q2; None or (s, t, point)."""
    d1 = p2 - p1
    d2 = q2 - q1
    den = d1[0] * d2[1] - d1[1] * d2[0]
    if abs(den) < 1e-14:
        return None
    rhs = q1 - p1
    s = (rhs[0] * d2[1] - rhs[1] * d2[0]) / den
    t = (rhs[0] * d1[1] - rhs[1] * d1[0]) / den
    if 0.0 <= s < 1.0 and 0.0 <= t < 1.0:
        return s, t, p1 + s * d1
    return None


def _loop_crossings(thetas, c_minus, phis, c_plus):
    """Approximate intersections of the two section loops in the (x, y) plane.

    Returns a list of (theta, phi, point) sorted by phi.
    """
    n, m = len(thetas), len(phis)
    step_t = 2.0 * np.pi / n
    step_p = 2.0 * np.pi / m
    found = []
    pm = c_minus[:, :2]
    pp = c_plus[:, :2]
    for i in range(n):
        p1, p2 = pm[i], pm[(i + 1) % n]
        if not (np.all(np.isfinite(p1)) and np.all(np.isfinite(p2))):
            continue
        for j in range(m):
            hit = _segments_cross(p1, p2, pp[j], pp[(j + 1) % m])
            if hit is not None:
                s, t, pt = hit
                found.append((thetas[i] + s * step_t, phis[j] + t * step_p, pt))
    found.sort(key=lambda z: z[1])
    return found


@dataclass
class GapFamily:
    """One connected branch of the raw Lin-gap profile xi(phi).

    Each entry pairs an arrival phase with the departure phase whose section
    point has the same x-coordinate; xi is the remaining y-difference, i.e.
    the gap along ell.  Within one family xi varies continuously, so a sign
    change flags a codimension-zero connection; in the tracking regime every
    family keeps one sign.
    """

    phis: np.ndarray
    thetas: np.ndarray
    xis: np.ndarray

    def __len__(self) -> int:
        return len(self.phis)

    def sign_changes(self) -> int:
        s = np.sign(self.xis)
        return int(np.sum(s[:-1] * s[1:] < 0))


def section_gap_profile(a: float, r: float, setup: LinSetup | None = None,
                        base: SystemParams | None = None,
                        n_scan: int = 192) -> list[GapFamily]:
    """Raw Lin-gap profiles from the section traces alone (no Newton).

    All x-matches between the two traces are collected and grouped into
    connected families; two sheets of ϑ-matches joined at a fold of the
    x-coordinate belong to one family.  Used for seeding the gap solvers
    and as a cheap census of connections.
    """
    setup = setup or LinSetup()
    params = (base or SystemParams()).replace(a=a, r=r)
    thetas, c_minus, phis, c_plus = _section_loops(params, setup, n_scan)
    xm, ym = c_minus[:, 0], c_minus[:, 1]
    n = len(thetas)
    m = len(phis)
    step_t = 2.0 * np.pi / n
    matches = []  # (j, theta_root, xi)
    for j, (xp, yp) in enumerate(zip(c_plus[:, 0], c_plus[:, 1])):
        for i in range(n):
            i2 = (i + 1) % n
            if not (np.isfinite(xm[i]) and np.isfinite(xm[i2])):
                continue
            dx1, dx2 = xm[i] - xp, xm[i2] - xp
            if dx1 == 0.0 or dx1 * dx2 < 0.0:
                f = dx1 / (dx1 - dx2)
                y_here = ym[i] + f * (ym[i2] - ym[i])
                matches.append((j, thetas[i] + f * step_t, yp - y_here))
    if not matches:
        return []

    # union-find over matches: neighbours in phi with nearby theta connect
    parent = list(range(len(matches)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[rj] = ri

    theta_tol = 8.0 * step_t
    by_phi: dict[int, list[int]] = {}
    for k, (j, th, _) in enumerate(matches):
        by_phi.setdefault(j, []).append(k)
    for j, ks in by_phi.items():
        for k1 in ks:
            for k2 in by_phi.get((j + 1) % m, []):
                d = abs(matches[k1][1] - matches[k2][1])
                if min(d, 2.0 * np.pi - d) < theta_tol:
                    union(k1, k2)

    groups: dict[int, list[int]] = {}
    for k in range(len(matches)):
        groups.setdefault(find(k), []).append(k)
    families = []
    for ks in groups.values():
        ks.sort(key=lambda k: (matches[k][0], matches[k][1]))
        families.append(GapFamily(
            phis=np.array([phis[matches[k][0]] for k in ks]),
            thetas=np.array([matches[k][1] for k in ks]),
            xis=np.array([matches[k][2] for k in ks])))
    families.sort(key=len, reverse=True)
    return families


# -- solution container ---------------------------------------------------

@dataclass
class LinSolution:
    """Converged Lin boundary-value solution.

    ``w_minus``/``w_plus`` are the multiple-shooting node meshes (n_nodes, 3)
    of the departure and arrival segments; ``*_end`` are the integrated
    segment endpoints, so w_minus_end is the section point.  ``u_minus`` and
    ``u_plus`` hold the adjoint meshes for the codimension-one kind.
    """

    kind: str
    params: SystemParams
    setup: LinSetup
    theta: float
    phi: float | None
    xi: float
    w_minus: np.ndarray
    w_plus: np.ndarray
    w_minus_end: np.ndarray
    w_plus_end: np.ndarray
    u_minus: np.ndarray | None = None
    u_plus: np.ndarray | None = None
    u_minus_end: np.ndarray | None = None
    residual_norm: float = 0.0
    iterations: int = 0

    @property
    def half_time(self) -> float:
        return self.setup.half_time(self.params)

    @property
    def critical_rate(self) -> float:
        return self.params.r

    def section_point(self) -> np.ndarray:
        return self.w_minus_end

    def gap_vector(self) -> np.ndarray:
        return self.w_plus[0] - self.w_minus_end

    def check_invariants(self, tol: float = 1e-6) -> None:
        """Assert the defining boundary identities on this solution."""
        p, s = self.params, self.setup
        half_level = s.section_offset(p)
        if abs(self.w_minus_end[2] - half_level) > tol:
            raise AssertionError("w-(1) off the section")
        if abs(self.w_plus[0][2] - half_level) > tol:
            raise AssertionError("w+(0) off the section")
        gap = self.gap_vector() - self.xi * LIN_BASIS
        if np.max(np.abs(gap)) > tol:
            raise AssertionError("gap vector is not xi * ell")
        dep = _departure_rows(p, s, self.w_minus[0], self.theta)
        if np.max(np.abs(dep)) > tol:
            raise AssertionError("departure projections violated")
        if self.kind == "PtoE":
            arr = _arrival_rows_ptoe(p, s, self.w_plus_end)
        else:
            arr = _arrival_rows_ptop(p, s, self.w_plus_end, self.phi)
        if np.max(np.abs(arr)) > tol:
            raise AssertionError("arrival projections violated")
        if self.kind == "PtoP-codim1":
            if abs(self.u_minus_end @ np.array([1.0, 0.0, 0.0]) - 1.0) > tol:
                raise AssertionError("adjoint normalization violated")

    def lin_space_rank(self, fd: float = 1e-4) -> int:
        """Rank of the in-section spaces W-, W+ (as available) and L.

        Full rank equals 2 = dim Sigma; this is the Lin-space condition.
        """
        p, s = self.params, self.setup
        t_half = s.half_time(p)
        flow = _flow_factory(p, s, backend.SYS_EXTENDED)

        def minus_trace(th):
            return flow(departure_state(p, s, th), (), 1.0)[:2]

        vecs = [LIN_BASIS[:2]]
        tm = (minus_trace(self.theta + fd) - minus_trace(self.theta - fd)) / (2 * fd)
        vecs.append(tm)
        if self.kind != "PtoE":
            def plus_trace(ph):
                w_end = arrival_state_ptop(p, s, ph)
                nodes = _nodes_backward_from(p, s, w_end, 2)
                return nodes[0][:2]
            tp = (plus_trace(self.phi + fd) - plus_trace(self.phi - fd)) / (2 * fd)
            vecs.append(tp)
        mat = np.vstack(vecs)
        sv = np.linalg.svd(mat, compute_uv=False)
        return int(np.sum(sv > 1e-8 * sv[0]))


def _package(kind, params, setup, problem, sol: BvpSolution, theta, phi, xi,
             adjoint=False) -> LinSolution:
    nodes, _ = problem.unpack(sol.u)
    ends = problem.segment_endpoints(sol.u)
    if adjoint:
        return LinSolution(
            kind=kind, params=params, setup=setup, theta=theta, phi=phi, xi=xi,
            w_minus=nodes[0][:, :3], w_plus=nodes[1][:, :3],
            w_minus_end=ends[0][1][:3], w_plus_end=ends[1][1][:3],
            u_minus=nodes[0][:, 3:], u_plus=nodes[1][:, 3:],
            u_minus_end=ends[0][1][3:],
            residual_norm=sol.residual_norm, iterations=sol.iterations)
    return LinSolution(
        kind=kind, params=params, setup=setup, theta=theta, phi=phi, xi=xi,
        w_minus=nodes[0], w_plus=nodes[1],
        w_minus_end=ends[0][1], w_plus_end=ends[1][1],
        residual_norm=sol.residual_norm, iterations=sol.iterations)


# -- PtoE gap -------------------------------------------------------------

def _ptoe_problem(params: SystemParams, setup: LinSetup) -> BvpProblem:
    flow = _flow_factory(params, setup, backend.SYS_EXTENDED)
    segs = [Segment(flow, 3, setup.n_nodes), Segment(flow, 3, setup.n_nodes)]
    half_level = setup.section_offset(params)

    def boundary(ends, p):
        theta, xi = p
        (wm0, wm1), (wp0, wp1) = ends
        return np.concatenate([
            _departure_rows(params, setup, wm0, theta),
            _arrival_rows_ptoe(params, setup, wp1),
            [wm1[2] - half_level],
            wp0 - wm1 - xi * LIN_BASIS,
        ])

    return BvpProblem(segs, 2, boundary, 8)


def _seed_theta_ptoe(params, setup, x_target, n_scan=96):
    thetas, c_minus, _, _ = _section_loops(params, setup, n_scan)
    return float(thetas[np.nanargmin(np.abs(c_minus[:, 0] - x_target))])


def gap_ptoe(a: float, r: float, setup: LinSetup | None = None,
             guess: "LinSolution | float | None" = None,
             base: SystemParams | None = None,
             max_iter: int = 30) -> LinSolution:
    """Solve the PtoE Lin problem; the gap xi is a free unknown.

    ``guess`` may be a previous LinSolution (warm start) or a departure
    phase; by default the phase is found by scanning the section trace for
    the x-match with the stable manifold of Z+.
    """
    setup = setup or LinSetup()
    params = (base or SystemParams()).replace(a=a, r=r)
    problem = _ptoe_problem(params, setup)
    flow = _flow_factory(params, setup, backend.SYS_EXTENDED)

    if isinstance(guess, LinSolution):
        u0 = problem.pack([guess.w_minus, guess.w_plus],
                          [guess.theta, guess.xi])
    else:
        w_end = arrival_state_ptoe(params, setup)
        nodes_p = _nodes_backward_from(params, setup, w_end, setup.n_nodes)
        theta0 = (float(guess) if guess is not None
                  else _seed_theta_ptoe(params, setup, nodes_p[0][0]))
        nodes_m = _nodes_forward(flow, departure_state(params, setup, theta0),
                                 setup.n_nodes)
        wm1 = flow(nodes_m[-1], (), 1.0 / setup.n_nodes)
        xi0 = float((nodes_p[0] - wm1) @ LIN_BASIS)
        u0 = problem.pack([nodes_m, nodes_p], [theta0, xi0])

    try:
        sol = bvp_solve(problem, u0, tol=setup.tol, max_iter=max_iter)
    except NonConvergenceError:
        if isinstance(guess, LinSolution):
            # stale warm start: reseed from the section geometry
            return gap_ptoe(a, r, setup, guess=None, base=base,
                            max_iter=max_iter)
        raise
    theta, xi = sol.params
    return _package("PtoE", params, setup, problem, sol, float(theta), None,
                    float(xi))


# -- PtoP gap and connections --------------------------------------------

def _ptop_gap_problem_phase(params, setup, phi0) -> BvpProblem:
    """Square PtoP gap system with the arrival phase pinned."""
    flow = _flow_factory(params, setup, backend.SYS_EXTENDED)
    segs = [Segment(flow, 3, setup.n_nodes), Segment(flow, 3, setup.n_nodes)]
    half_level = setup.section_offset(params)

    def boundary(ends, p):
        theta, xi = p
        (wm0, wm1), (wp0, wp1) = ends
        return np.concatenate([
            _departure_rows(params, setup, wm0, theta),
            _arrival_rows_ptop(params, setup, wp1, phi0),
            [wm1[2] - half_level],
            wp0 - wm1 - xi * LIN_BASIS,
        ])

    return BvpProblem(segs, 2, boundary, 8)


def _ptop_gap_problem_delta(params, setup) -> BvpProblem:
    """The printed 9-unknown system closed by |w-(0) - g1(theta)| = delta.

    Requires literal projections: they make the departure offset exactly
    delta long, so the closure is consistent (and redundant, leaving the
    expected one-parameter solution family; minimum-norm Newton picks the
    family point nearest the guess).
    """
    if setup.projection != "literal":
        raise ValueError(
            "closure='delta' needs projection='literal': with adjoint "
            "projections the offset length is delta |gamma_u(theta)| != "
            "delta and the printed closure is unsatisfiable; use "
            "closure='phase' instead")
    flow = _flow_factory(params, setup, backend.SYS_EXTENDED)
    segs = [Segment(flow, 3, setup.n_nodes), Segment(flow, 3, setup.n_nodes)]
    half_level = setup.section_offset(params)
    orbit = frozen_orbit(params, "stable", "past")

    def boundary(ends, p):
        theta, phi, xi = p
        (wm0, wm1), (wp0, wp1) = ends
        off = wm0 - orbit.point(theta)
        return np.concatenate([
            _departure_rows(params, setup, wm0, theta),
            _arrival_rows_ptop(params, setup, wp1, phi),
            [wm1[2] - half_level],
            wp0 - wm1 - xi * LIN_BASIS,
            [off @ off - setup.delta ** 2],
        ])

    return BvpProblem(segs, 3, boundary, 9, allow_singular=True)


def _ptop_guess(params, setup, theta0, phi0, flow):
    nodes_m = _nodes_forward(flow, departure_state(params, setup, theta0),
                             setup.n_nodes)
    nodes_p = _nodes_backward_from(params, setup,
                                   arrival_state_ptop(params, setup, phi0),
                                   setup.n_nodes)
    wm1 = flow(nodes_m[-1], (), 1.0 / setup.n_nodes)
    xi0 = float((nodes_p[0] - wm1) @ LIN_BASIS)
    return nodes_m, nodes_p, xi0


def gap_ptop(a: float, r: float, setup: LinSetup | None = None,
             guess: "LinSolution | None" = None, phi: float | None = None,
             closure: Literal["phase", "delta"] = "phase",
             base: SystemParams | None = None,
             max_iter: int = 30) -> LinSolution:
    """Solve the codimension-zero PtoP Lin problem at one (a, r).

    closure="phase" pins the arrival phase (from ``phi`` or the guess) and
    solves the regular square system; xi(phi) is then a smooth scalar
    profile whose zeros are connections.  closure="delta" solves the
    9-unknown system closed by the departure-offset length; its solutions
    form a one-parameter family and minimum-norm Newton returns the family
    point nearest the seed.
    """
    setup = setup or LinSetup()
    params = (base or SystemParams()).replace(a=a, r=r)
    flow = _flow_factory(params, setup, backend.SYS_EXTENDED)

    theta0 = None
    if phi is None:
        if isinstance(guess, LinSolution) and guess.phi is not None:
            phi = guess.phi
        else:
            # default to the family point of smallest raw gap
            families = section_gap_profile(a, r, setup, base=base)
            if not families:
                raise BracketError("the section traces share no x-range; "
                                   "no PtoP gap problem to solve")
            fam = min(families, key=lambda f: np.min(np.abs(f.xis)))
            k = int(np.argmin(np.abs(fam.xis)))
            phi = float(fam.phis[k])
            theta0 = float(fam.thetas[k])

    if theta0 is None and not isinstance(guess, LinSolution):
        families = section_gap_profile(a, r, setup, base=base)
        best = None
        for fam in families:
            d = np.abs((fam.phis - phi + np.pi) % (2.0 * np.pi) - np.pi)
            k = int(np.argmin(d))
            if best is None or d[k] < best[0]:
                best = (d[k], float(fam.thetas[k]))
        theta0 = best[1] if best is not None else 0.0

    if closure == "phase":
        problem = _ptop_gap_problem_phase(params, setup, phi)
        if isinstance(guess, LinSolution):
            u0 = problem.pack([guess.w_minus, guess.w_plus],
                              [guess.theta, guess.xi])
        else:
            nodes_m, nodes_p, xi0 = _ptop_guess(params, setup, theta0, phi, flow)
            u0 = problem.pack([nodes_m, nodes_p], [theta0, xi0])
        try:
            sol = bvp_solve(problem, u0, tol=setup.tol, max_iter=max_iter)
        except NonConvergenceError:
            if isinstance(guess, LinSolution):
                return gap_ptop(a, r, setup, guess=None, phi=phi,
                                closure=closure, base=base, max_iter=max_iter)
            raise
        theta, xi = sol.params
        return _package("PtoP-codim0", params, setup, problem, sol,
                        float(theta), float(phi), float(xi))

    if closure != "delta":
        raise ValueError("closure must be 'phase' or 'delta'")
    problem = _ptop_gap_problem_delta(params, setup)
    if isinstance(guess, LinSolution):
        u0 = problem.pack([guess.w_minus, guess.w_plus],
                          [guess.theta, guess.phi, guess.xi])
    else:
        nodes_m, nodes_p, xi0 = _ptop_guess(params, setup, theta0, phi, flow)
        u0 = problem.pack([nodes_m, nodes_p], [theta0, phi, xi0])
    sol = bvp_solve(problem, u0, tol=setup.tol, max_iter=max_iter)
    theta, phi_out, xi = sol.params
    return _package("PtoP-codim0", params, setup, problem, sol,
                    float(theta), float(phi_out), float(xi))


def _ptop_connection_problem(params, setup, r_free: bool) -> BvpProblem:
    """Square connection system (xi = 0, both phases unknown).

    With r_free the rate joins the unknowns and the solution set is the
    one-parameter family whose folds in r are the tangency rates.
    """
    r_index = 2 if r_free else None
    flow = _flow_factory(params, setup, backend.SYS_EXTENDED, r_index=r_index)
    segs = [Segment(flow, 3, setup.n_nodes), Segment(flow, 3, setup.n_nodes)]

    def boundary(ends, p):
        theta, phi = p[0], p[1]
        pr = params if not r_free else params.replace(r=float(p[2]))
        (wm0, wm1), (wp0, wp1) = ends
        return np.concatenate([
            _departure_rows(pr, setup, wm0, theta),
            _arrival_rows_ptop(pr, setup, wp1, phi),
            [wm1[2] - setup.section_offset(pr)],
            wp0 - wm1,
        ])

    return BvpProblem(segs, 3 if r_free else 2, boundary, 8,
                      allow_singular=r_free)


def ptop_connection(a: float, r: float, setup: LinSetup | None = None,
                    guess: "LinSolution | tuple[float, float] | None" = None,
                    which: int = 0, base: SystemParams | None = None,
                    max_iter: int = 30) -> LinSolution:
    """An actual codimension-zero PtoP connection (xi = 0) at (a, r).

    The section traces of the two manifolds intersect in at least two
    points inside the partial-tipping regime; ``which`` picks among them in
    order of arrival phase.  Raises BracketError when the traces do not
    intersect (tracking or total regime).
    """
    setup = setup or LinSetup()
    params = (base or SystemParams()).replace(a=a, r=r)
    problem = _ptop_connection_problem(params, setup, r_free=False)
    flow = _flow_factory(params, setup, backend.SYS_EXTENDED)

    if isinstance(guess, LinSolution):
        theta0, phi0 = guess.theta, guess.phi
        u0 = problem.pack([guess.w_minus, guess.w_plus], [theta0, phi0])
    else:
        if guess is not None:
            theta0, phi0 = float(guess[0]), float(guess[1])
        else:
            crossings = _loop_crossings(*_section_loops(params, setup))
            if not crossings:
                raise BracketError(
                    f"section traces do not intersect at (a, r) = ({a}, {r}); "
                    "no codimension-zero PtoP connection here")
            theta0, phi0, _ = crossings[which % len(crossings)]
        nodes_m, nodes_p, _ = _ptop_guess(params, setup, theta0, phi0, flow)
        u0 = problem.pack([nodes_m, nodes_p], [theta0, phi0])

    sol = bvp_solve(problem, u0, tol=setup.tol, max_iter=max_iter)
    theta, phi = sol.params
    return _package("PtoP-codim0", params, setup, problem, sol,
                    float(theta), float(phi), 0.0)


def continue_connection_in_r(connection: LinSolution, *,
                             step: float = 0.02, max_points: int = 400,
                             r_window: tuple[float, float] = (1e-4, 5.0),
                             direction: float = 1.0,
                             stop_after_folds: int | None = None
                             ) -> ContinuationBranch:
    """Trace the codimension-zero connection family in r at fixed a.

    The family is a closed curve on the phase torus whose folds in r bound
    the partial-tipping rate window and seed the codimension-one solver.
    In the lifted phase coordinates the branch repeats with a 2 pi shift
    instead of closing, so bound it by ``stop_after_folds`` or max_points.
    """
    params, setup = connection.params, connection.setup
    problem = _ptop_connection_problem(params, setup, r_free=True)
    u0 = problem.pack([connection.w_minus, connection.w_plus],
                      [connection.theta, connection.phi, params.r])
    start = bvp_solve(problem, u0, tol=setup.tol, max_iter=30)
    return continue_solution(problem, start, param_index=2,
                             direction=direction, step=step,
                             max_points=max_points, window=r_window,
                             stop_after_folds=stop_after_folds,
                             tol=setup.tol * 10.0, max_step=0.08)


def ptop_fold_connections(a: float, r_probe: float = 0.15,
                          setup: LinSetup | None = None,
                          base: SystemParams | None = None,
                          step: float = 0.03, max_points: int = 600
                          ) -> tuple[LinSolution, LinSolution]:
    """Near-fold codimension-zero connections bounding the rate window.

    Continues the connection family found at (a, r_probe) until both folds
    in r are crossed and rebuilds the interpolated fold points as
    LinSolution seeds.  Returns them ordered by rate: the lower fold
    (partial-tipping onset) first, the upper fold second.
    """
    setup = setup or LinSetup()
    conn = ptop_connection(a, r_probe, setup, base=base)
    branch = continue_connection_in_r(conn, step=step, max_points=max_points,
                                      stop_after_folds=2)
    if len(branch.folds) < 2:
        raise RuntimeError(
            f"found {len(branch.folds)} fold(s) in {len(branch.points)} "
            "continuation points; raise max_points")
    params = conn.params
    problem = _ptop_connection_problem(params, setup, r_free=True)

    def from_fold(fold):
        nodes, p = problem.unpack(fold.u)
        pr = params.replace(r=float(p[2]))
        ends = problem.segment_endpoints(fold.u)
        return LinSolution(
            kind="PtoP-codim0", params=pr, setup=setup,
            theta=float(p[0]), phi=float(p[1]), xi=0.0,
            w_minus=nodes[0], w_plus=nodes[1],
            w_minus_end=ends[0][1], w_plus_end=ends[1][1])

    sols = sorted((from_fold(f) for f in branch.folds[:2]),
                  key=lambda s: s.params.r)
    return sols[0], sols[1]


# -- codimension one ------------------------------------------------------

_RECT_TOL = 2e-6  # Gauss-Newton stall floor of the rectangular systems


def _solve_rectangular(problem: BvpProblem, u0: np.ndarray, tol: float,
                       max_iter: int) -> BvpSolution:
    """Solve a consistent rectangular system, tolerating the GN stall floor.

    With one more equation than unknowns the Newton direction comes from a
    finite-difference least-squares solve, whose fixed point is only as
    accurate as the Jacobian; iterations typically stall around 1e-6 in the
    residual even though the underlying system is consistent.  A stall
    below _RECT_TOL is accepted as converged.
    """
    try:
        return bvp_solve(problem, u0, tol=tol, max_iter=max_iter)
    except NonConvergenceError as err:
        best = err.best
        if best is not None and best.residual_norm < _RECT_TOL:
            return dataclasses.replace(best, converged=True)
        raise


def _codim1_problem(params, setup) -> BvpProblem:
    """Combined (w, u) system: tangent PtoP connection with its adjoint.

    16 boundary conditions against 15 boundary unknowns; consistent at
    solutions (the w-gap and adjoint systems share the tangency), solved in
    the least-squares sense.
    """
    flow = _flow_factory(params, setup, backend.SYS_ADJOINT, r_index=2)
    segs = [Segment(flow, 6, setup.n_nodes), Segment(flow, 6, setup.n_nodes)]
    e1 = np.array([1.0, 0.0, 0.0])

    def boundary(ends, p):
        theta, phi = p[0], p[1]
        pr = params.replace(r=float(p[2]))
        (ym0, ym1), (yp0, yp1) = ends
        wm0, wm1, um0, um1 = ym0[:3], ym1[:3], ym0[3:], ym1[3:]
        wp0, wp1, up0, up1 = yp0[:3], yp1[:3], yp0[3:], yp1[3:]
        return np.concatenate([
            _departure_rows(pr, setup, wm0, theta),
            _arrival_rows_ptop(pr, setup, wp1, phi),
            [wm1[2] - setup.section_offset(pr)],
            wp0 - wm1,
            _adjoint_departure_rows(pr, um0, theta),
            _adjoint_arrival_rows(pr, up1, phi),
            up0 - um1,
            [um1 @ e1 - 1.0],
        ])

    problem = BvpProblem(segs, 3, boundary, 16, allow_rectangular=True)
    # Bookkeeping: with xi fixed to 0 one gap equation is redundant with
    # the others, leaving exactly one more equation than unknowns.
    n_unknowns = sum(seg.dim * seg.n_nodes for seg in segs) + problem.n_params
    n_eqs = sum(seg.dim * (seg.n_nodes - 1) for seg in segs) + problem.n_boundary
    assert n_eqs == n_unknowns + 1, (n_eqs, n_unknowns)
    return problem


def _seed_adjoint(connection: LinSolution):
    """Adjoint meshes for the codim-1 seed.

    The true adjoint solution has no component along the duals that grow in
    the integration direction, so each segment is seeded from the end where
    its admissible dual is known exactly: forward from departure with the
    radial-left dual of the past orbit, backward from arrival with the
    radial-left dual of the future orbit.  Spurious components then decay
    along the way and the meshes are rescaled to the section normalization
    <u-(1), e1> = 1.
    """
    params, setup = connection.params, connection.setup
    n_nodes = setup.n_nodes
    t_half = setup.half_time(params)
    args = (params.a, params.b, params.omega, params.r, params.lambda_max)
    e1 = np.array([1.0, 0.0, 0.0])

    def step(y, dt):
        out, status, _ = backend.integrate_endpoint(
            backend.SYS_ADJOINT, *args, y, dt, setup.rel_tol, setup.abs_tol,
            np.inf, _ESCAPE_SQ)
        if status != 0:
            raise RuntimeError("adjoint seed integration failed")
        return out

    # The w meshes are kept exactly as given (multiple shooting tolerates
    # node-wise error without amplification); only u is transported, with w
    # reset to the stored node at every sub-step.

    # minus segment: u-(0) must be orthogonal to the unstable and center
    # right vectors, i.e. proportional to the radial-left dual; transported
    # forward so spurious dual components decay
    orbit_m = frozen_orbit(params, "stable", "past")
    fr_m = orbit_frame(orbit_m, params, connection.theta)
    nodes_m = np.empty((n_nodes, 6))
    nodes_m[:, :3] = connection.w_minus
    u = fr_m.left[0]
    for k in range(n_nodes):
        nodes_m[k, 3:] = u
        y = step(np.concatenate([connection.w_minus[k], u]), t_half / n_nodes)
        u = y[3:]
    scale_m = u @ e1  # u is now u-(1), the section value
    if abs(scale_m) < 1e-12:
        raise RuntimeError("adjoint seed orthogonal to the normalization vector")
    nodes_m[:, 3:] /= scale_m

    # plus segment: u+(1) proportional to the radial-left dual of the
    # future orbit; transported backward for the same reason
    orbit_p = frozen_orbit(params, "unstable", "future")
    fr_p = orbit_frame(orbit_p, params, connection.phi)
    nodes_p = np.empty((n_nodes, 6))
    nodes_p[:, :3] = connection.w_plus
    u = fr_p.left[2]
    starts = [connection.w_plus[k] for k in range(1, n_nodes)]
    starts.append(connection.w_plus_end)
    for k in range(n_nodes - 1, -1, -1):
        y = step(np.concatenate([starts[k], u]), -t_half / n_nodes)
        u = y[3:]
        nodes_p[k, 3:] = u
    scale_p = nodes_p[0, 3:] @ e1  # u+(0) matches u-(1) at the section
    if abs(scale_p) < 1e-12:
        raise RuntimeError("adjoint seed orthogonal to the normalization vector")
    nodes_p[:, 3:] /= scale_p

    # section trace tangent, for the fold-proximity diagnostic
    fd = 1e-4
    flow3 = _flow_factory(params, setup, backend.SYS_EXTENDED)

    def minus_trace(th):
        return flow3(departure_state(params, setup, th), (), 1.0)

    tan = (minus_trace(connection.theta + fd)
           - minus_trace(connection.theta - fd)) / (2 * fd)
    return nodes_m, nodes_p, tan


def solve_codim1_ptop(a: float, guess: LinSolution,
                      setup: LinSetup | None = None,
                      base: SystemParams | None = None,
                      max_iter: int = 40) -> LinSolution:
    """Tangent PtoP connection: solves for the critical rate at fixed a.

    ``guess`` is a codimension-zero connection near a fold of the family in
    r (from continue_connection_in_r).  The returned solution's params.r is
    the critical rate (r1 or r2 depending on the fold).
    """
    setup = setup or guess.setup
    params = (base or guess.params).replace(a=a)
    problem = _codim1_problem(params, setup)

    um, up, tan_minus = _seed_adjoint(guess)

    # warn when the seed is far from tangency: compare section-trace tangents
    fd = 1e-4
    params_g = guess.params

    def plus_trace(ph):
        w_end = arrival_state_ptop(params_g, setup, ph)
        return _nodes_backward_from(params_g, setup, w_end, 2)[0]

    tan_plus = (plus_trace(guess.phi + fd) - plus_trace(guess.phi - fd)) / (2 * fd)
    t1 = tan_minus[:2] / np.linalg.norm(tan_minus[:2])
    t2 = tan_plus[:2] / np.linalg.norm(tan_plus[:2])
    angle = np.arccos(min(1.0, abs(float(t1 @ t2))))
    if angle > 0.35:
        warnings.warn(
            f"codim-1 seed is {angle:.2f} rad from tangency; expected a "
            "near-fold codimension-zero connection", stacklevel=2)

    u0 = problem.pack([um, up], [guess.theta, guess.phi, params_g.r])
    sol = _solve_rectangular(problem, u0, setup.tol, max_iter)
    theta, phi, r_crit = sol.params
    out = _package("PtoP-codim1", params.replace(r=float(r_crit)), setup,
                   problem, sol, float(theta), float(phi), 0.0, adjoint=True)
    return out


# -- critical-rate root finding and threshold continuation ----------------

def _newton_bisect(f, lo: float, hi: float, f_lo: float, f_hi: float,
                   tol: float, fd_step: float, max_iter: int) -> float:
    """Bracketed scalar Newton with finite-difference slope.

    ``f_lo`` and ``f_hi`` are the already-evaluated values at the bracket
    ends, which must differ in sign.  Iterates leaving the shrinking
    bracket (or a vanishing slope) fall back to bisection, so the bracket
    invariant is preserved throughout.
    """
    x = 0.5 * (lo + hi)
    for _ in range(max_iter):
        fx = f(x)
        if fx == 0.0:
            return x
        if np.sign(fx) == np.sign(f_lo):
            lo, f_lo = x, fx
        else:
            hi, f_hi = x, fx
        slope = (f(x + fd_step) - fx) / fd_step
        x_new = x - fx / slope if slope != 0.0 else np.nan
        if not np.isfinite(x_new) or not (min(lo, hi) < x_new < max(lo, hi)):
            x_new = 0.5 * (lo + hi)  # bisection fallback
        if abs(x_new - x) <= tol:
            return float(x_new)
        x = x_new
    return float(x)


def find_critical_rate(kind: Literal["PtoE"], a: float,
                       bracket: tuple[float, float],
                       setup: LinSetup | None = None,
                       base: SystemParams | None = None,
                       tol: float = 1e-5, fd_step: float = 1e-4,
                       max_iter: int = 60) -> float:
    """Root of r -> xi_PtoE(a, r): the rate of the PtoE connection.

    Newton-Raphson with finite-difference derivative, guarded by the
    bracket; any iterate leaving it falls back to bisection, so the bracket
    invariant is preserved.  Raises BracketError without a sign change.
    """
    if kind != "PtoE":
        raise ValueError("only the PtoE critical rate is a scalar root problem")
    setup = setup or LinSetup()
    ra, rb = float(bracket[0]), float(bracket[1])
    sol_a = gap_ptoe(a, ra, setup, base=base)
    sol_b = gap_ptoe(a, rb, setup, guess=sol_a, base=base)
    fa, fb = sol_a.xi, sol_b.xi
    if np.sign(fa) == np.sign(fb):
        raise BracketError(
            f"xi has the same sign at both bracket ends: xi({ra}) = {fa:.3e}, "
            f"xi({rb}) = {fb:.3e}")

    warm = [sol_a]

    def xi_at(r: float) -> float:
        sol = gap_ptoe(a, r, setup, guess=warm[0], base=base)
        warm[0] = sol
        return sol.xi

    return _newton_bisect(xi_at, ra, rb, fa, fb, tol, fd_step, max_iter)


def _ptoe_connection_problem(params, setup, a_free: bool) -> BvpProblem:
    """PtoE with xi = 0 imposed and r unknown (plus a for continuation)."""
    r_index = 1

    def flow_factory_param_a():
        def flow(y, p, ds):
            r = float(p[r_index])
            pr_a = params.a if not a_free else float(p[2])
            if not 0.0 < r < 10.0 or not 0.0 < pr_a < 0.25:
                raise RuntimeError("parameter probe out of range")
            pr = params.replace(r=r, a=pr_a)
            t_half = setup.half_time(pr)
            out, status, _ = backend.integrate_endpoint(
                backend.SYS_EXTENDED, pr.a, pr.b, pr.omega, pr.r,
                pr.lambda_max, np.asarray(y, float), t_half * ds,
                setup.rel_tol, setup.abs_tol, np.inf, _ESCAPE_SQ)
            if status != 0:
                raise RuntimeError(f"segment flow failed (status {status})")
            return out
        return flow

    flow = flow_factory_param_a()
    segs = [Segment(flow, 3, setup.n_nodes), Segment(flow, 3, setup.n_nodes)]

    def boundary(ends, p):
        theta = p[0]
        pr = params.replace(r=float(p[1]),
                            a=params.a if not a_free else float(p[2]))
        (wm0, wm1), (wp0, wp1) = ends
        return np.concatenate([
            _departure_rows(pr, setup, wm0, theta),
            _arrival_rows_ptoe(pr, setup, wp1),
            [wm1[2] - setup.section_offset(pr)],
            wp0 - wm1,
        ])

    n_params = 3 if a_free else 2
    return BvpProblem(segs, n_params, boundary, 8, allow_singular=a_free)


@dataclass
class ContinuationCurve:
    """Ordered (a, r) samples of a critical-rate curve."""

    kind: str
    a_values: np.ndarray
    r_values: np.ndarray
    solutions: list
    reason: str = ""

    def __len__(self) -> int:
        return len(self.a_values)


def continue_threshold(seed: LinSolution, a_range: tuple[float, float], *,
                       step: float = 0.01, max_points: int = 200,
                       direction: float = 1.0) -> ContinuationCurve:
    """Continue a critical-rate curve across a.

    A PtoE seed (assumed at its gap root) is continued as the PtoE
    connection zero-set, giving the r0 curve; a codimension-one PtoP seed
    is continued in the combined adjoint system, giving r1 or r2 depending
    on the branch.  Emits ordered (a, r) samples; leaving ``a_range``
    truncates cleanly.
    """
    params, setup = seed.params, seed.setup
    if seed.kind == "PtoE":
        problem = _ptoe_connection_problem(params, setup, a_free=True)
        u0 = problem.pack([seed.w_minus, seed.w_plus],
                          [seed.theta, params.r, params.a])
        a_slot = 2
        r_slot = 1
        kind = "r0 (PtoE)"
        tol = setup.tol * 10
        start = bvp_solve(problem, u0, tol=tol, max_iter=40)
    elif seed.kind == "PtoP-codim1":
        problem = _codim1_problem_free_a(params, setup)
        nodes_m = np.hstack([seed.w_minus, seed.u_minus])
        nodes_p = np.hstack([seed.w_plus, seed.u_plus])
        u0 = problem.pack([nodes_m, nodes_p],
                          [seed.theta, seed.phi, params.r, params.a])
        a_slot = 3
        r_slot = 2
        kind = "r1/r2 (PtoP tangency)"
        tol = _RECT_TOL
        start = _solve_rectangular(problem, u0, setup.tol * 10, 40)
    else:
        raise ValueError(
            "threshold continuation needs a PtoE root or PtoP-codim1 seed")

    branch = continue_solution(problem, start, param_index=a_slot,
                               direction=direction, step=step,
                               max_points=max_points,
                               window=(a_range[0], a_range[1]),
                               fold_param=a_slot, tol=tol,
                               max_step=6 * step)
    a_vals = branch.param_values(a_slot)
    r_vals = branch.param_values(r_slot)
    sols = []
    for point in branch.points:
        _, p = problem.unpack(point.u)
        pr = params.replace(r=float(p[r_slot]), a=float(p[a_slot]))
        if seed.kind == "PtoE":
            sols.append(_package("PtoE", pr, setup, problem, point,
                                 float(p[0]), None, 0.0))
        else:
            sols.append(_package("PtoP-codim1", pr, setup, problem, point,
                                 float(p[0]), float(p[1]), 0.0, adjoint=True))
    return ContinuationCurve(kind=kind, a_values=a_vals, r_values=r_vals,
                             solutions=sols, reason=branch.reason)


def _codim1_problem_free_a(params, setup) -> BvpProblem:
    """Codim-1 system with both r and a free (for threshold continuation)."""
    def flow(y, p, ds):
        r, a = float(p[2]), float(p[3])
        if not 0.0 < r < 10.0 or not 0.0 < a < 0.25:
            raise RuntimeError("parameter probe out of range")
        pr = params.replace(r=r, a=a)
        t_half = setup.half_time(pr)
        out, status, _ = backend.integrate_endpoint(
            backend.SYS_ADJOINT, pr.a, pr.b, pr.omega, pr.r, pr.lambda_max,
            np.asarray(y, float), t_half * ds, setup.rel_tol, setup.abs_tol,
            np.inf, _ESCAPE_SQ)
        if status != 0:
            raise RuntimeError(f"segment flow failed (status {status})")
        return out

    segs = [Segment(flow, 6, setup.n_nodes), Segment(flow, 6, setup.n_nodes)]
    e1 = np.array([1.0, 0.0, 0.0])

    def boundary(ends, p):
        theta, phi = p[0], p[1]
        pr = params.replace(r=float(p[2]), a=float(p[3]))
        (ym0, ym1), (yp0, yp1) = ends
        wm0, wm1, um0, um1 = ym0[:3], ym1[:3], ym0[3:], ym1[3:]
        wp0, wp1, up0, up1 = yp0[:3], yp1[:3], yp0[3:], yp1[3:]
        return np.concatenate([
            _departure_rows(pr, setup, wm0, theta),
            _arrival_rows_ptop(pr, setup, wp1, phi),
            [wm1[2] - setup.section_offset(pr)],
            wp0 - wm1,
            _adjoint_departure_rows(pr, um0, theta),
            _adjoint_arrival_rows(pr, up1, phi),
            up0 - um1,
            [um1 @ e1 - 1.0],
        ])

    return BvpProblem(segs, 4, boundary, 16, allow_rectangular=True)
