"""Ensemble-shooting classification of rate-induced tipping from a periodic orbit.

For each parameter pair (a, r) an ensemble of trajectories is seeded on a
ring around the past-limit orbit Gamma^s_- at the early time t = -T, when
the shift variable has only risen to Lambda = s, and integrated through
the shift to t = +T.  Members whose endpoint lies outside the unstable
orbit around the future equilibrium Z_+ (or that escape outright) have
tipped; the tipped fraction decides between tracking, partial tipping and
total tipping.  Combined with the past limit of the one-dimensional
stable manifold W^s(Z_+), obtained by time-reversed shooting from Z_+,
this produces the six-region classification of the (a, r) plane.

Time convention: t = 0 is the shift midpoint, Lambda(0) = lambda_max/2,
so Lambda(t) = lambda_max / (1 + exp(-r lambda_max t)) and the choice
T = ln((lambda_max - s)/s) / (r lambda_max) brackets the shift window
s <= Lambda <= lambda_max - s symmetrically.
"""

from __future__ import annotations

import math
import multiprocessing
from dataclasses import dataclass, replace

import numpy as np

from . import backend
from .frozen import orbit_radii
from .integrator import IntegratorConfig, IntegrationFailure, Trajectory, integrate
from .model import SystemParams, extended_field

__all__ = [
    "ShootingConfig",
    "TippingReport",
    "StableManifoldResult",
    "PullbackFiberSet",
    "SweepResult",
    "integration_time",
    "ensemble_size_schedule",
    "classify_point",
    "stable_manifold_zplus",
    "classify_region",
    "sweep",
    "pullback_fibers",
]

# Escape test threshold on |z - Lambda|^2, same scale the kernel uses
# elsewhere; far beyond the unstable orbit, so crossing it is irreversible.
_ESCAPE_SQ = 400.0

# Relative half-width of the ambiguity band around rho_s inside which the
# backward endpoint of W^s(Z_+) is not yet committed to either past limit.
_WSZ_BAND = 0.05

# Ensemble-size schedule anchors: M rises log-linearly in r between the
# two anchor points and is clamped outside them.
_SCHEDULE_LO = (0.06, 200)
_SCHEDULE_HI = (0.24, 20000)


def integration_time(r: float, lambda_max: float, s: float) -> float:
    """Half-length T of the shooting window for Lambda-margin ``s``.

    With Lambda(0) = lambda_max/2 the logistic shift satisfies
    Lambda(-T) = s and Lambda(T) = lambda_max - s exactly for
    T = ln((lambda_max - s)/s) / (r lambda_max).
    """
    if r <= 0 or lambda_max <= 0:
        raise ValueError("r and lambda_max must be positive")
    if not 0 < s < lambda_max / 2:
        raise ValueError("need 0 < s < lambda_max/2")
    return math.log((lambda_max - s) / s) / (r * lambda_max)


def ensemble_size_schedule(r: float) -> int:
    """Ensemble size M as a function of the rate, log-linear between anchors.

    M(r <= 0.06) = 200 and M(r >= 0.24) = 20000, with ln M interpolated
    linearly in r between those anchors.  Faster shifts need finer phase
    resolution because the tipped arcs shrink near the total-tipping
    boundary.
    """
    if r <= 0:
        raise ValueError("r must be positive")
    (r_lo, m_lo), (r_hi, m_hi) = _SCHEDULE_LO, _SCHEDULE_HI
    if r <= r_lo:
        return m_lo
    if r >= r_hi:
        return m_hi
    frac = (r - r_lo) / (r_hi - r_lo)
    return round(math.exp(math.log(m_lo) + frac * (math.log(m_hi) - math.log(m_lo))))


@dataclass(frozen=True)
class ShootingConfig:
    """Parameters of the shooting classifier.

    ``M`` is the ensemble size; ``None`` selects ensemble_size_schedule(r)
    per point.  ``s`` is the Lambda-margin defining the window, and
    ``seed_offset`` the outward radial displacement of the seed ring from
    the past orbit.  ``tipped_threshold`` overrides the endpoint radius
    around Z_+ beyond which a member counts as tipped; ``None`` uses the
    unstable-orbit radius rho_u(a), outside which no return is possible.
    """

    M: int | None = None
    s: float = 0.01
    seed_offset: float = 1e-3
    tipped_threshold: float | None = None
    rel_tol: float = 1e-9
    abs_tol: float = 1e-12

    def __post_init__(self) -> None:
        if self.M is not None and self.M < 2:
            raise ValueError("ensemble size M must be at least 2")
        if self.s <= 0:
            raise ValueError("Lambda-margin s must be positive")
        if self.seed_offset <= 0:
            raise ValueError("seed_offset must be positive")
        if self.tipped_threshold is not None and self.tipped_threshold <= 0:
            raise ValueError("tipped_threshold must be positive")

    def ensemble_size(self, r: float) -> int:
        return self.M if self.M is not None else ensemble_size_schedule(r)


@dataclass(frozen=True)
class TippingReport:
    """Outcome of classify_point at one (a, r) cell.

    ``arcs`` lists the tipped intervals of seed phase as (theta_lo,
    theta_hi) pairs; an arc wrapping through phase 0 has theta_hi >
    2 pi.  ``wsz_past_limit`` is "Z-" or "Gamma_u-"; ``region`` is the
    roman label I..VI keyed by (classification, wsz_past_limit).
    ``degraded`` marks reports where some ensemble members failed to
    integrate, ``region_uncertain`` those where the manifold past limit
    stayed inside the ambiguity band after a retry.
    """

    a: float
    r: float
    classification: str
    tipped_fraction: float
    arcs: tuple[tuple[float, float], ...]
    region: str
    wsz_past_limit: str
    M: int
    T: float
    degraded: bool = False
    region_uncertain: bool = False


# Region labels keyed by (classification, wsz past limit).  Calibrated so
# the six exemplar cells (0.1,0.1), (0.005,0.157), (0.1,0.15),
# (0.04,0.18), (0.2,0.15), (0.1,0.21) receive I..VI in that order:
# the class fixes the row, the manifold past limit the column.
_REGION_MAP = {
    ("Tracking", "Z-"): "I",
    ("Tracking", "Gamma_u-"): "II",
    ("Partial", "Z-"): "III",
    ("Partial", "Gamma_u-"): "IV",
    ("Total", "Z-"): "V",
    ("Total", "Gamma_u-"): "VI",
}


def _resolve_params(a: float, r: float, base: SystemParams | None) -> SystemParams:
    if not 0 < a < 0.25:
        raise ValueError(f"a = {a} outside the supercritical window (0, 0.25)")
    if r <= 0:
        raise ValueError("r must be positive")
    if base is None:
        return SystemParams(a=a, r=r)
    return replace(base, a=a, r=r)


def _seed_ring(params: SystemParams, config: ShootingConfig, m: int) -> np.ndarray:
    """M evenly phased states on the circle of radius rho_s + offset.

    The ring is centred on the frozen orbit centre at Lambda = s, i.e. on
    z = s, and carries Lambda = s as third component.
    """
    u_s, _ = orbit_radii(params.a, params.b)
    rho = math.sqrt(u_s) + config.seed_offset
    theta = 2.0 * np.pi * np.arange(m) / m
    seeds = np.empty((m, 3))
    seeds[:, 0] = config.s + rho * np.cos(theta)
    seeds[:, 1] = rho * np.sin(theta)
    seeds[:, 2] = config.s
    return seeds


def _tipped_arcs(tipped: np.ndarray) -> tuple[tuple[float, float], ...]:
    """Contiguous tipped runs of the circular phase index as phase intervals."""
    m = len(tipped)
    if not tipped.any():
        return ()
    if tipped.all():
        return ((0.0, 2.0 * np.pi),)
    # Walk runs on the unwrapped index, then merge across the seam.
    runs = []
    start = None
    for k in range(m):
        if tipped[k] and start is None:
            start = k
        elif not tipped[k] and start is not None:
            runs.append((start, k - 1))
            start = None
    if start is not None:
        runs.append((start, m - 1))
    if len(runs) > 1 and runs[0][0] == 0 and runs[-1][1] == m - 1:
        first = runs.pop(0)
        last = runs.pop()
        runs.append((last[0], first[1] + m))
    step = 2.0 * np.pi / m
    return tuple((lo * step, hi * step) for lo, hi in runs)


def classify_point(a: float,
                   r: float,
                   config: ShootingConfig | None = None,
                   base: SystemParams | None = None) -> TippingReport:
    """Classify (a, r) as Tracking / Partial / Total by ensemble shooting.

    Seeds ``M`` evenly phased initial conditions on a ring just outside
    the past orbit at t = -T (Lambda = s) and integrates each to t = +T.
    A member has tipped iff it escaped during the run or its endpoint
    z-distance from Z_+ = (lambda_max, 0) exceeds the threshold radius
    (rho_u by default).  The report also carries the past limit of
    W^s(Z_+) and the resulting region label.
    """
    config = config or ShootingConfig()
    params = _resolve_params(a, r, base)
    lmax = params.lambda_max
    if not config.s < lmax / 2:
        raise ValueError("Lambda-margin s must be below lambda_max/2")
    m = config.ensemble_size(r)
    T = integration_time(r, lmax, config.s)

    seeds = _seed_ring(params, config, m)
    ends, status, _ = backend.ensemble_endpoints(
        params.a, params.b, params.omega, params.r, lmax,
        seeds, 2.0 * T, config.rel_tol, config.abs_tol, np.inf, _ESCAPE_SQ,
    )

    _, u_u = orbit_radii(params.a, params.b)
    threshold = config.tipped_threshold
    if threshold is None:
        threshold = math.sqrt(u_u)
    dist = np.hypot(ends[:, 0] - lmax, ends[:, 1])
    valid = status != 2
    tipped = (status == 1) | (dist > threshold)
    degraded = bool(~valid.any() or (~valid).any())
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise IntegrationFailure(
            f"all {m} ensemble members failed at (a, r) = ({a}, {r})",
            Trajectory(np.zeros(1), seeds[:1].copy(), seeds[:1] * 0.0, "failed"),
        )
    n_tipped = int(tipped[valid].sum())
    fraction = n_tipped / n_valid
    if n_tipped == 0:
        classification = "Tracking"
    elif n_tipped == n_valid:
        classification = "Total"
    else:
        classification = "Partial"
    arcs = _tipped_arcs(tipped & valid)

    wsz = stable_manifold_zplus(a, r, config, base)
    region = _REGION_MAP[(classification, wsz.label)]
    return TippingReport(
        a=a, r=r, classification=classification,
        tipped_fraction=fraction, arcs=arcs, region=region,
        wsz_past_limit=wsz.label, M=m, T=T,
        degraded=degraded, region_uncertain=not wsz.resolved,
    )


@dataclass(frozen=True)
class StableManifoldResult:
    """Backward trace of W^s(Z_+) with its resolved past limit.

    ``states`` samples the time-reversed trajectory from near Z_+ down to
    Lambda <= s (columns x, y, Lambda; ``times`` are negative, relative
    to the start at Z_+).  ``label`` is "Z-" if the trace ends inside the
    frozen stable-orbit radius rho_s, the backward basin boundary, and
    "Gamma_u-" outside it.  ``resolved`` is False when the endpoint fell
    inside the ambiguity band around rho_s even after one retry with a
    doubled time window.
    """

    times: np.ndarray
    states: np.ndarray
    label: str
    resolved: bool

    def section_crossing(self, level: float) -> np.ndarray:
        """Interpolated (x, y) where the trace crosses Lambda = level.

        Lambda decreases strictly along the backward trace, so the
        crossing is unique.
        """
        lam = self.states[:, 2]
        if not (lam.min() <= level <= lam.max()):
            raise ValueError(f"Lambda = {level} not crossed by the manifold trace")
        k = int(np.searchsorted(-lam, -level))
        if k == 0:
            return self.states[0, :2].copy()
        w = (lam[k - 1] - level) / (lam[k - 1] - lam[k])
        return (1 - w) * self.states[k - 1, :2] + w * self.states[k, :2]


def _wsz_backward(params: SystemParams, config: ShootingConfig,
                  t_back: float) -> Trajectory:
    icfg = IntegratorConfig(rel_tol=config.rel_tol, abs_tol=config.abs_tol,
                            escape_radius_sq=_ESCAPE_SQ)
    y0 = np.array([params.lambda_max, 0.0, params.lambda_max - config.s])
    return integrate(lambda y: extended_field(y, params), y0, 0.0, -t_back, icfg)


def stable_manifold_zplus(a: float,
                          r: float,
                          config: ShootingConfig | None = None,
                          base: SystemParams | None = None) -> StableManifoldResult:
    """Trace W^s(Z_+) backward and label its past limit.

    Integrates the time-reversed extended system from (lambda_max, 0,
    lambda_max - s), the point a margin ``s`` below Z_+ on its attracting
    Lambda-axis, until Lambda <= s.  Because the frozen stable orbit is
    the boundary between the two backward basins, the past limit is Z_-
    iff the endpoint satisfies |z| < rho_s, else Gamma_u-.  An endpoint
    within ``_WSZ_BAND`` (relative) of rho_s triggers one retry with a
    doubled time window; if still inside the band the result keeps the
    side it fell on but is flagged unresolved.
    """
    config = config or ShootingConfig()
    params = _resolve_params(a, r, base)
    lmax = params.lambda_max
    u_s, _ = orbit_radii(params.a, params.b)
    rho_s = math.sqrt(u_s)
    # Lambda travel time from lambda_max - s down to s (logit difference).
    t_back = 2.0 * math.log((lmax - config.s) / config.s) / (params.r * lmax)

    resolved = True
    for scale in (1.0, 2.0):
        traj = _wsz_backward(params, config, t_back * scale)
        end = traj.final_state
        radius = math.hypot(end[0], end[1])
        if abs(radius / rho_s - 1.0) > _WSZ_BAND:
            break
    else:
        resolved = False
    label = "Z-" if radius < rho_s else "Gamma_u-"
    ts = np.linspace(0.0, traj.t_final, 400)
    states = np.array([traj(t) for t in ts])
    return StableManifoldResult(times=ts, states=states, label=label,
                                resolved=resolved)


def classify_region(a: float,
                    r: float,
                    config: ShootingConfig | None = None,
                    base: SystemParams | None = None) -> str:
    """Region label I..VI from the (class, manifold past limit) signature."""
    return classify_point(a, r, config, base).region


@dataclass(frozen=True)
class SweepResult:
    """Grid of TippingReport over an (a, r) product grid.

    ``reports[i][j]`` covers (a_values[i], r_values[j]) and is None where
    that cell failed; failures are recorded as (i, j, message).
    """

    a_values: np.ndarray
    r_values: np.ndarray
    reports: tuple[tuple[TippingReport | None, ...], ...]
    failures: tuple[tuple[int, int, str], ...]

    def report(self, i: int, j: int) -> TippingReport | None:
        return self.reports[i][j]


def _sweep_cell(job) -> tuple[bool, object]:
    a, r, config, base = job
    try:
        return True, classify_point(a, r, config, base)
    except Exception as err:  # per-cell failures must not kill the sweep
        return False, f"{type(err).__name__}: {err}"


def sweep(a_values,
          r_values,
          config: ShootingConfig | None = None,
          base: SystemParams | None = None,
          jobs: int = 1) -> SweepResult:
    """classify_point over the product grid, cell-parallel and deterministic.

    Cells are independent; with ``jobs > 1`` they are distributed over a
    process pool and merged back in grid order, so the result does not
    depend on the degree of parallelism.  A failing cell is recorded in
    ``failures`` and leaves a None in the grid.
    """
    config = config or ShootingConfig()
    a_values = np.atleast_1d(np.asarray(a_values, dtype=float))
    r_values = np.atleast_1d(np.asarray(r_values, dtype=float))
    grid = [(float(ai), float(rj), config, base)
            for ai in a_values for rj in r_values]
    if jobs > 1:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(jobs) as pool:
            flat = pool.map(_sweep_cell, grid)
    else:
        flat = [_sweep_cell(job) for job in grid]

    nr = len(r_values)
    reports = []
    failures = []
    for i in range(len(a_values)):
        row = []
        for j in range(nr):
            ok, payload = flat[i * nr + j]
            if ok:
                row.append(payload)
            else:
                row.append(None)
                failures.append((i, j, payload))
        reports.append(tuple(row))
    return SweepResult(a_values=a_values, r_values=r_values,
                       reports=tuple(reports), failures=tuple(failures))


@dataclass(frozen=True)
class PullbackFiberSet:
    """Point-cloud approximation of pullback-attractor fibers.

    ``fibers[k]`` holds the surviving sample points (columns x, y) at
    ``times[k]``, where ``Lambdas[k]`` is the shift value there.  Samples
    that escape are dropped from later fibers and recorded in ``escapes``
    as (sample index, first grid time at which the escape shows).
    """

    times: np.ndarray
    Lambdas: np.ndarray
    fibers: tuple[np.ndarray, ...]
    escapes: tuple[tuple[int, float], ...]

    def to_payload(self) -> list[dict]:
        """JSON-ready list of {t, Lambda, points} fiber records."""
        return [
            {"t": float(t), "Lambda": float(lam), "points": fib.tolist()}
            for t, lam, fib in zip(self.times, self.Lambdas, self.fibers)
        ]


def pullback_fibers(a: float,
                    r: float,
                    n_phases: int = 64,
                    times=None,
                    config: ShootingConfig | None = None,
                    base: SystemParams | None = None) -> PullbackFiberSet:
    """Approximate pullback-attractor fibers by evolving a ring of samples.

    ``n_phases`` evenly phased samples are seeded on the circle of radius
    rho_s + seed_offset around the origin, the past-limit orbit, at the
    most negative grid time (which must satisfy t <= -T so the shift is
    still within its margin there) and integrated across the grid.
    Escaping samples are the tipping trajectories; they are recorded and
    dropped from subsequent fibers rather than treated as errors.
    """
    config = config or ShootingConfig()
    params = _resolve_params(a, r, base)
    lmax = params.lambda_max
    T = integration_time(r, lmax, config.s)
    if times is None:
        times = np.linspace(-T, T, 33)
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or len(times) < 2 or np.any(np.diff(times) <= 0):
        raise ValueError("times must be a strictly increasing 1-D grid")
    if times[0] > -T:
        raise ValueError(f"time grid must start at or before -T = {-T:.6g}")
    if n_phases < 2:
        raise ValueError("need at least two phase samples")

    u_s, _ = orbit_radii(params.a, params.b)
    rho = math.sqrt(u_s) + config.seed_offset
    phase = 2.0 * np.pi * np.arange(n_phases) / n_phases
    lam0 = lmax / (1.0 + math.exp(-params.r * lmax * times[0]))
    seeds = np.column_stack([rho * np.cos(phase), rho * np.sin(phase),
                             np.full(n_phases, lam0)])

    samples, status = backend.ensemble_samples(
        params.a, params.b, params.omega, params.r, lmax,
        seeds, times - times[0], config.rel_tol, config.abs_tol,
        np.inf, _ESCAPE_SQ,
    )

    # An escaped member holds its escape state; the first grid index where
    # |z - Lambda|^2 is at the escape threshold marks it gone.
    lam_grid = lmax / (1.0 + np.exp(-params.r * lmax * times))
    gone = np.zeros(n_phases, dtype=bool)
    escapes = []
    fibers = []
    for k in range(len(times)):
        zx = samples[k, :, 0] - samples[k, :, 2]
        zy = samples[k, :, 1]
        now_out = zx * zx + zy * zy >= 0.99 * _ESCAPE_SQ
        for idx in np.nonzero(now_out & ~gone)[0]:
            escapes.append((int(idx), float(times[k])))
        gone |= now_out
        fibers.append(samples[k, ~gone, :2].copy())
    # Members flagged escaped by status but never seen outside on the grid
    # escaped between the last two grid times.
    for idx in np.nonzero((status == 1) & ~gone)[0]:
        escapes.append((int(idx), float(times[-1])))
    escapes.sort()
    return PullbackFiberSet(times=times, Lambdas=lam_grid,
                            fibers=tuple(fibers),
                            escapes=tuple(escapes))
