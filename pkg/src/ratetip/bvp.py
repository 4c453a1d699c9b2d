"""Multipoint boundary-value-problem engine.

Multiple shooting with a damped Newton corrector and pseudo-arclength
continuation with fold detection.  A problem is a list of ODE segments, each
solved on a scaled interval s in [0, 1] through a user-supplied flow map, plus
a vector of scalar free parameters and a boundary-residual function coupling
all segment endpoints.  The residual Jacobian is assembled by forward finite
differences (default step 1e-4).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Segment",
    "BvpProblem",
    "BvpSolution",
    "FoldPoint",
    "ContinuationBranch",
    "NonConvergenceError",
    "RankDeficiencyError",
    "ContinuationStallError",
    "make_flow",
    "solve",
    "continue_solution",
]


class NonConvergenceError(RuntimeError):
    """Newton iteration failed to converge; carries the best iterate seen."""

    def __init__(self, message: str, best: "BvpSolution | None" = None):
        super().__init__(message)
        self.best = best


class RankDeficiencyError(RuntimeError):
    """Square Newton matrix is numerically singular.

    ``null_direction`` is the right singular vector of the smallest singular
    value, useful for detecting folds.
    """

    def __init__(self, message: str, null_direction: np.ndarray | None = None):
        super().__init__(message)
        self.null_direction = null_direction


class ContinuationStallError(RuntimeError):
    """Continuation step fell below the minimum; carries the partial branch."""

    def __init__(self, message: str, branch: "ContinuationBranch | None" = None):
        super().__init__(message)
        self.branch = branch


@dataclass
class Segment:
    """One shooting segment.

    ``flow(y, params, ds)`` advances the state ``y`` by a fraction ``ds`` of
    the segment's scaled interval under the free-parameter vector ``params``.
    Any time scaling (a segment duration T, possibly parameter dependent)
    lives inside the flow map.
    """

    flow: Callable[[np.ndarray, np.ndarray, float], np.ndarray]
    dim: int
    n_nodes: int = 10

    def __post_init__(self) -> None:
        if self.dim < 1 or self.n_nodes < 1:
            raise ValueError("segment needs dim >= 1 and n_nodes >= 1")


def make_flow(rhs: Callable[[np.ndarray, np.ndarray], np.ndarray],
              rel_tol: float = 1e-10, abs_tol: float = 1e-12):
    """Build a Segment flow map from a scaled right-hand side dy/ds = rhs(y, p).

    Convenience for test problems; the physical modules supply kernel-backed
    flow maps directly.
    """
    from .integrator import IntegratorConfig, integrate

    config = IntegratorConfig(rel_tol=rel_tol, abs_tol=abs_tol)

    def flow(y: np.ndarray, params: np.ndarray, ds: float) -> np.ndarray:
        traj = integrate(lambda w: rhs(w, params), y, 0.0, ds, config)
        return traj.final_state

    return flow


class BvpProblem:
    """Segments + free parameters + boundary residual.

    The unknown vector packs all segment node states (``n_nodes`` per segment,
    node k at s = k/n_nodes) followed by the free parameters.  Interior
    continuity conditions are generated automatically; ``boundary`` receives
    the list of per-segment ``(y_start, y_end)`` endpoint pairs (y_end is the
    flow image of the last node) and the parameter vector, and returns
    ``n_boundary`` residuals.

    The system must be square (unknown count == equation count) unless
    ``allow_rectangular`` is set, in which case it may be overdetermined and
    is solved in the least-squares sense (for residuals that are consistent at
    solutions).  ``allow_singular`` tolerates rank-deficient square systems
    (solution families) instead of raising RankDeficiencyError.
    """

    def __init__(self,
                 segments: Sequence[Segment],
                 n_params: int,
                 boundary: Callable[[list[tuple[np.ndarray, np.ndarray]], np.ndarray], np.ndarray],
                 n_boundary: int,
                 allow_rectangular: bool = False,
                 allow_singular: bool = False):
        self.segments = list(segments)
        self.n_params = int(n_params)
        self.boundary = boundary
        self.n_boundary = int(n_boundary)
        self.allow_rectangular = allow_rectangular
        self.allow_singular = allow_singular

        self.n_state = sum(s.n_nodes * s.dim for s in self.segments)
        self.n_unknowns = self.n_state + self.n_params
        n_continuity = sum((s.n_nodes - 1) * s.dim for s in self.segments)
        self.n_equations = n_continuity + self.n_boundary

        counts = (f"{self.n_equations} equations vs {self.n_unknowns} unknowns "
                  f"({self.n_state} segment states + {self.n_params} parameters)")
        if self.n_equations == self.n_unknowns:
            pass
        elif self.n_equations > self.n_unknowns:
            if not allow_rectangular:
                raise ValueError(
                    f"non-square system: {counts}; pass allow_rectangular=True "
                    "for an overdetermined least-squares solve")
        elif self.n_equations == self.n_unknowns - 1:
            if not allow_singular:
                raise ValueError(
                    f"non-square system: {counts}; pass allow_singular=True to "
                    "declare a one-dimensional solution family (minimum-norm "
                    "solves, pseudo-arclength continuation)")
        else:
            raise ValueError(f"underdetermined system: {counts}")

    # -- packing ---------------------------------------------------------

    def unpack(self, u: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Split the unknown vector into per-segment node arrays and params."""
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n_unknowns,):
            raise ValueError(f"expected unknown vector of length {self.n_unknowns}, "
                             f"got shape {u.shape}")
        nodes = []
        pos = 0
        for seg in self.segments:
            n = seg.n_nodes * seg.dim
            nodes.append(u[pos:pos + n].reshape(seg.n_nodes, seg.dim))
            pos += n
        return nodes, u[pos:]

    def pack(self, nodes: Sequence[np.ndarray], params: Sequence[float]) -> np.ndarray:
        parts = [np.asarray(n, dtype=float).ravel() for n in nodes]
        parts.append(np.asarray(params, dtype=float).ravel())
        u = np.concatenate(parts) if parts else np.empty(0)
        if u.size != self.n_unknowns:
            raise ValueError("packed vector has wrong length")
        return u

    def guess_from_samples(self, samplers: Sequence[Callable[[float], np.ndarray]],
                           params: Sequence[float]) -> np.ndarray:
        """Build an initial guess by sampling callables y(s) at the node mesh."""
        nodes = []
        for seg, f in zip(self.segments, samplers):
            nodes.append(np.array([f(k / seg.n_nodes) for k in range(seg.n_nodes)]))
        return self.pack(nodes, params)

    # -- residual --------------------------------------------------------

    def segment_endpoints(self, u: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """(y_start, y_end) per segment, y_end integrated from the last node."""
        nodes, params = self.unpack(u)
        ends = []
        for seg, yk in zip(self.segments, nodes):
            ds = 1.0 / seg.n_nodes
            ends.append((yk[0].copy(), seg.flow(yk[-1], params, ds)))
        return ends

    def residual(self, u: np.ndarray) -> np.ndarray:
        nodes, params = self.unpack(u)
        parts: list[np.ndarray] = []
        ends = []
        for seg, yk in zip(self.segments, nodes):
            ds = 1.0 / seg.n_nodes
            prev = None
            for k in range(seg.n_nodes):
                img = seg.flow(yk[k], params, ds)
                if k + 1 < seg.n_nodes:
                    parts.append(img - yk[k + 1])
                prev = img
            ends.append((yk[0], prev))
        b = np.asarray(self.boundary(ends, params), dtype=float).ravel()
        if b.size != self.n_boundary:
            raise ValueError(f"boundary returned {b.size} residuals, "
                             f"declared {self.n_boundary}")
        parts.append(b)
        return np.concatenate(parts)


@dataclass
class BvpSolution:
    """Converged (or best-effort) multiple-shooting solution."""

    problem: BvpProblem
    u: np.ndarray
    residual: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool

    @property
    def params(self) -> np.ndarray:
        return self.problem.unpack(self.u)[1]

    def nodes(self, i: int = 0) -> np.ndarray:
        """Node states of segment ``i``, shape (n_nodes, dim)."""
        return self.problem.unpack(self.u)[0][i]

    def endpoints(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return self.problem.segment_endpoints(self.u)


# -- Newton core ---------------------------------------------------------

def _fd_jacobian(fun: Callable[[np.ndarray], np.ndarray], u: np.ndarray,
                 r0: np.ndarray, fd_step: float) -> np.ndarray:
    jac = np.empty((r0.size, u.size))
    for j in range(u.size):
        up = u.copy()
        up[j] += fd_step
        jac[:, j] = (fun(up) - r0) / fd_step
    return jac


def _lstsq_step(jac: np.ndarray, r: np.ndarray, rcond: float = 1e-12):
    """Minimum-norm least-squares Newton step with the spectrum exposed."""
    uu, ss, vt = np.linalg.svd(jac, full_matrices=False)
    cut = ss > rcond * ss[0]
    step = -(vt[cut].T @ ((uu[:, cut].T @ r) / ss[cut]))
    return step, ss, vt


def _newton(fun: Callable[[np.ndarray], np.ndarray], u0: np.ndarray, *,
            tol: float, max_iter: int, fd_step: float,
            square_rank_check: bool, max_halvings: int = 8):
    """Damped Newton/Gauss-Newton on a residual function.

    Returns (u, r, norm, iterations, converged).  Raises RankDeficiencyError
    for singular square systems when square_rank_check is set, and
    NonConvergenceError (with the best iterate attached by the caller) when
    damping cannot find a decrease or the budget runs out.
    """
    u = np.asarray(u0, dtype=float).copy()
    r = fun(u)
    norm = float(np.linalg.norm(r, np.inf))
    for it in range(max_iter):
        if norm <= tol:
            return u, r, norm, it, True
        jac = _fd_jacobian(fun, u, r, fd_step)
        step, ss, vt = _lstsq_step(jac, r)
        if square_rank_check and jac.shape[0] == jac.shape[1]:
            if ss[-1] <= 1e-12 * max(ss[0], 1.0):
                raise RankDeficiencyError(
                    f"singular Newton matrix (condition {ss[0] / max(ss[-1], 1e-300):.2e})",
                    null_direction=vt[-1])
        lam = 1.0
        accepted = False
        for _ in range(max_halvings + 1):
            try:
                u_try = u + lam * step
                r_try = fun(u_try)
            except RuntimeError:
                lam *= 0.5
                continue
            norm_try = float(np.linalg.norm(r_try, np.inf))
            if norm_try < norm or norm_try <= tol:
                u, r, norm = u_try, r_try, norm_try
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            return u, r, norm, it + 1, False
    return u, r, norm, max_iter, norm <= tol


def solve(problem: BvpProblem, initial_guess: np.ndarray, *,
          tol: float = 1e-8, max_iter: int = 25,
          fd_step: float = 1e-4) -> BvpSolution:
    """Damped-Newton solve of the multiple-shooting system.

    Converged when the residual infinity-norm is <= tol.  Raises
    NonConvergenceError with the best iterate attached, or
    RankDeficiencyError (with the null direction) if a square system turns
    out numerically singular and the problem was not declared singular.
    """
    u, r, norm, iters, ok = _newton(
        problem.residual, initial_guess, tol=tol, max_iter=max_iter,
        fd_step=fd_step,
        square_rank_check=not (problem.allow_singular or problem.allow_rectangular))
    sol = BvpSolution(problem, u, r, norm, iters, ok)
    if not ok:
        raise NonConvergenceError(
            f"no convergence after {iters} iterations "
            f"(best residual {norm:.3e}, tol {tol:.1e})", best=sol)
    return sol


# -- pseudo-arclength continuation ---------------------------------------

@dataclass
class FoldPoint:
    """Sign change of the fold-parameter tangent component along a branch."""

    index: int            # branch point preceding the fold
    u: np.ndarray         # secant interpolation of the unknown vector
    param_value: float    # fold-parameter value at the interpolated point


@dataclass
class ContinuationBranch:
    points: list[BvpSolution] = field(default_factory=list)
    folds: list[FoldPoint] = field(default_factory=list)
    reason: str = ""

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def param_values(self, param_index: int) -> np.ndarray:
        return np.array([p.params[param_index] for p in self.points])


def _branch_tangent(problem: BvpProblem, u: np.ndarray, fd_step: float,
                    weights: np.ndarray) -> np.ndarray:
    """Unit tangent of the solution family: smallest right singular vector."""
    r = problem.residual(u)
    jac = _fd_jacobian(problem.residual, u, r, fd_step)
    _, _, vt = np.linalg.svd(jac, full_matrices=True)
    t = vt[-1]
    return t / np.sqrt(float(np.sum(weights * t * t)))


def continue_solution(problem: BvpProblem, start: BvpSolution, *,
                      param_index: int, direction: float = 1.0,
                      step: float = 0.02, min_step: float = 1e-7,
                      max_step: float = 0.2, max_points: int = 400,
                      window: tuple[float, float] | None = None,
                      fold_param: int | None = None,
                      stop_after_folds: int | None = None,
                      tol: float = 1e-8, fd_step: float = 1e-4,
                      corrector_max_iter: int = 12) -> ContinuationBranch:
    """Pseudo-arclength predictor-corrector along a one-dimensional family.

    The problem must have a one-dimensional solution set (one more unknown
    than independent equations).  ``param_index`` indexes the free-parameter
    block and orients the initial tangent and the truncation ``window``;
    folds are flagged where the ``fold_param`` (default: param_index) tangent
    component changes sign.  Stops on max_points, window exit, branch
    closure, or after ``stop_after_folds`` folds; raises
    ContinuationStallError with the partial branch when the step underflows.
    """
    if not start.converged:
        raise ValueError("continuation requires a converged start solution")
    fold_param = param_index if fold_param is None else fold_param
    full_idx = problem.n_state + param_index
    fold_idx = problem.n_state + fold_param

    # States are weighted by 1/n_state so that long meshes do not drown the
    # scalar parameters in the arclength metric.
    weights = np.full(problem.n_unknowns, 1.0 / max(problem.n_state, 1))
    weights[problem.n_state:] = 1.0

    branch = ContinuationBranch(points=[start])
    u = start.u.copy()
    tangent = _branch_tangent(problem, u, fd_step, weights)
    if abs(tangent[full_idx]) > 1e-13:
        if np.sign(tangent[full_idx]) != np.sign(direction):
            tangent = -tangent
    elif direction < 0:
        tangent = -tangent

    ds = step
    u0 = u.copy()
    while len(branch.points) < max_points:
        pred = u + ds * tangent

        def corrector(v: np.ndarray) -> np.ndarray:
            arc = float(np.sum(weights * (v - pred) * tangent))
            return np.append(problem.residual(v), arc)

        try:
            v, r, norm, iters, ok = _newton(
                corrector, pred, tol=tol, max_iter=corrector_max_iter,
                fd_step=fd_step, square_rank_check=False)
            if ok:
                new_tan = _branch_tangent(problem, v, fd_step, weights)
        except RuntimeError:
            ok = False
        if not ok:
            ds *= 0.5
            if ds < min_step:
                branch.reason = "stall"
                raise ContinuationStallError(
                    f"continuation step underflow at point {len(branch.points)}",
                    branch=branch)
            continue

        if float(np.sum(weights * new_tan * tangent)) < 0.0:
            new_tan = -new_tan
        sol = BvpSolution(problem, v, r[:-1], float(np.linalg.norm(r[:-1], np.inf)),
                          iters, True)
        if np.sign(new_tan[fold_idx]) != np.sign(tangent[fold_idx]) \
                and abs(tangent[fold_idx]) > 0.0:
            f = abs(tangent[fold_idx]) / (abs(tangent[fold_idx]) + abs(new_tan[fold_idx]))
            u_fold = u + f * (v - u)
            branch.folds.append(FoldPoint(index=len(branch.points) - 1,
                                          u=u_fold,
                                          param_value=float(u_fold[fold_idx])))
        branch.points.append(sol)
        u, tangent = v, new_tan

        if stop_after_folds is not None and len(branch.folds) >= stop_after_folds:
            branch.reason = "folds"
            return branch
        if window is not None:
            p = float(u[full_idx])
            if not (window[0] <= p <= window[1]):
                branch.reason = "window"
                return branch
        if len(branch.points) >= 8:
            dist0 = np.sqrt(float(np.sum(weights * (u - u0) ** 2)))
            if dist0 < 0.7 * ds:
                branch.reason = "closed"
                return branch
        if iters <= 4:
            ds = min(ds * 1.3, max_step)

    branch.reason = "max_points"
    return branch
