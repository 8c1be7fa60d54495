"""Grey-box identification of ECM parameters per SOC interval.

Each segment of drive-cycle data is fitted by minimizing the simulation
(output) error of the model started from a rested cell.  Parameters are
optimized in log space, so positivity holds without constraints.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ecm import CellConfig, CellState, CurrentProfile, FixedProfileSimulator, VoltageTrace, coulomb_count, simulate
from .errors import (
    DegeneracyWarning,
    InvalidInputError,
    PartialCoverageWarning,
    ScheduleStructureError,
)
from .ocv import OcvCurve, residual_metrics
from .params import EDGE_TOL, PARAM_NAMES, ParameterSchedule, ParameterSet, intervals_from_edges

log = logging.getLogger(__name__)

DEFAULT_EDGES = (100, 90, 80, 70, 60, 50, 40, 30, 20, 10)
MIN_SEGMENT_SAMPLES = 50
# an RC pair whose voltage never exceeds this is indistinguishable from absent
NEGLIGIBLE_PAIR_V = 1e-6

# log-parameter box; keeps exp() finite while the optimizer explores
_LOG_LO = math.log(1e-9)
_LOG_HI = math.log(1e16)


@dataclass(frozen=True)
class Segment:
    profile: CurrentProfile
    voltage: VoltageTrace
    soc_interval: tuple
    z_start: float
    start_index: int = 0

    def __post_init__(self):
        hi, lo = self.soc_interval
        if not hi > lo:
            raise InvalidInputError(f"bad SOC interval {self.soc_interval}")
        if len(self.voltage) != len(self.profile):
            raise InvalidInputError("segment current and voltage are not aligned")


@dataclass(frozen=True)
class FitReport:
    params: ParameterSet
    rmse: float
    max_abs: float
    iterations: int
    converged: bool
    objective: float = float("nan")
    gradient_norm: float = float("nan")
    history: tuple = field(default=(), repr=False, compare=False)


def rest_mask(current: np.ndarray, dt: float, threshold: float, min_duration: float) -> np.ndarray:
    """True for samples inside runs of ``|I| < threshold`` lasting longer than ``min_duration``."""
    quiet = np.abs(current) < threshold
    mask = np.zeros_like(quiet)
    padded = np.concatenate(([False], quiet, [False])).astype(np.int8)
    starts = np.flatnonzero(np.diff(padded) == 1)
    stops = np.flatnonzero(np.diff(padded) == -1)
    for s, e in zip(starts, stops):
        if (e - s) * dt > min_duration:
            mask[s:e] = True
    return mask


def segment_by_soc(
    profile: CurrentProfile,
    voltage: VoltageTrace,
    q: float,
    z0: float,
    edges: Sequence[float] = DEFAULT_EDGES,
    rest_current: float | None = None,
    rest_duration: float = 60.0,
) -> list[Segment]:
    """Split a drive cycle into one segment per SOC interval.

    Each interval's samples run from the first crossing of its upper edge
    to the first crossing of its lower edge; rest periods at either end are
    trimmed off.  The default rest threshold is a C/500 current.  Intervals
    whose lower edge is never reached are dropped with a
    :class:`PartialCoverageWarning`.
    """
    if len(voltage) != len(profile):
        raise InvalidInputError("current and voltage traces differ in length")
    intervals = intervals_from_edges(edges)
    fracs = np.array([intervals[0][0]] + [lo for _, lo in intervals]) / 100.0
    if z0 < fracs[0] - EDGE_TOL:
        raise InvalidInputError(f"initial SOC {z0} is below the first edge {fracs[0] * 100:g}%")
    if rest_current is None:
        rest_current = q / 3600.0 / 500.0

    z = coulomb_count(profile, q, z0)[:-1]
    crossing = []
    for f in fracs:
        hits = np.flatnonzero(z <= f + EDGE_TOL)
        crossing.append(int(hits[0]) if hits.size else None)
    resting = rest_mask(profile.samples, profile.dt, rest_current, rest_duration)
    volts = voltage.samples

    segments = []
    for j, interval in enumerate(intervals):
        start, stop = crossing[j], crossing[j + 1]
        if start is None or stop is None:
            if j == 0:
                warnings.warn("SOC never crosses the second edge; no segments", PartialCoverageWarning, stacklevel=2)
            else:
                warnings.warn(
                    f"data ends before the {interval[1]:g}% edge; {len(segments)} segments produced",
                    PartialCoverageWarning,
                    stacklevel=2,
                )
            break
        active = np.flatnonzero(~resting[start:stop])
        if active.size == 0:
            continue
        s, e = start + int(active[0]), start + int(active[-1]) + 1
        if e - s < 2:
            continue
        segments.append(
            Segment(
                profile.slice(s, e),
                VoltageTrace(profile.dt, volts[s:e]),
                interval,
                float(z[s]),
                s,
            )
        )
    return segments


def initial_guess(seg: Segment) -> ParameterSet:
    """Rs from the voltage jump at the largest current step; fixed time constants and capacitances."""
    di = np.diff(seg.profile.samples)
    dv = np.diff(seg.voltage.samples)
    k = int(np.argmax(np.abs(di)))
    rs = -dv[k] / di[k] if di[k] != 0 else float("nan")
    if not math.isfinite(rs) or rs <= 0:
        rs = 0.01
    return ParameterSet(10.0, 100.0, 1000.0, 1000.0, rs)


class _SegmentModel:
    """Model output for one segment as a function of log-parameters."""

    def __init__(self, seg: Segment, ocv: OcvCurve, q: float):
        self.measured = np.asarray(seg.voltage.samples)
        self.sim = FixedProfileSimulator(seg.profile, q, ocv, CellState.rested(seg.z_start))

    def params(self, logp) -> ParameterSet:
        return ParameterSet.from_array(np.exp(np.clip(logp, _LOG_LO, _LOG_HI)))

    def output(self, params: ParameterSet) -> np.ndarray:
        return self.sim.voltage(params)

    def residual(self, logp) -> np.ndarray:
        return self.output(self.params(logp)) - self.measured

    def jacobian(self, logp, step=1e-6) -> np.ndarray:
        cols = []
        for j in range(logp.size):
            e = np.zeros_like(logp)
            e[j] = step
            cols.append((self.residual(logp + e) - self.residual(logp - e)) / (2 * step))
        return np.column_stack(cols)


def levenberg_marquardt(fun, jac, x0, max_iter=200, ftol=1e-10, xtol=1e-8, max_step=1.0):
    """Minimize ``||fun(x)||^2`` with Marquardt-scaled damping.

    Each trial step solves the damped least-squares problem by orthogonal
    factorization and is shortened so no component moves by more than
    ``max_step``; in log-parameter space this keeps a single step from
    jumping onto the flat region where an RC pair has vanished.  Returns ``(x, iterations, converged, history)`` where
    ``history`` lists the objective after every accepted step; it is
    non-increasing by construction.
    """
    x = np.asarray(x0, dtype=float).copy()
    r = fun(x)
    f = float(r @ r)
    history = [f]
    lam = 1e-3
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        J = jac(x)
        scale = np.sqrt(np.maximum(np.sum(J * J, axis=0), 1e-300))
        accepted = False
        while lam <= 1e16:
            A = np.vstack([J, np.diag(math.sqrt(lam) * scale)])
            b = np.concatenate([-r, np.zeros(x.size)])
            dx = np.linalg.lstsq(A, b, rcond=None)[0]
            big = np.max(np.abs(dx))
            if big > max_step:
                dx *= max_step / big
            x_new = x + dx
            r_new = fun(x_new)
            f_new = float(r_new @ r_new)
            if math.isfinite(f_new) and f_new < f:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            # no descent direction left at working precision
            converged = True
            break
        rel_decrease = (f - f_new) / max(f, 1e-300)
        rel_step = np.linalg.norm(dx) / (np.linalg.norm(x) + xtol)
        x, r, f = x_new, r_new, f_new
        history.append(f)
        lam = max(lam / 10.0, 1e-12)
        if rel_decrease < ftol or rel_step < xtol:
            converged = True
            break
    return x, it, converged, history


def identify_segment(
    seg: Segment,
    ocv: OcvCurve,
    q: float,
    init_guess: ParameterSet | None = None,
    max_iter: int = 200,
    ftol: float = 1e-10,
    xtol: float = 1e-8,
    max_step: float = 1.0,
) -> FitReport:
    """Fit the five parameters to one segment by output-error least squares."""
    if len(seg.profile) < MIN_SEGMENT_SAMPLES:
        raise InvalidInputError(
            f"segment {seg.soc_interval} has {len(seg.profile)} samples; need {MIN_SEGMENT_SAMPLES}"
        )
    if init_guess is None:
        init_guess = initial_guess(seg)
    model = _SegmentModel(seg, ocv, q)
    x0 = np.log(init_guess.as_array())
    x, iterations, converged, history = levenberg_marquardt(
        model.residual, model.jacobian, x0, max_iter=max_iter, ftol=ftol, xtol=xtol, max_step=max_step
    )
    params = model.params(x)
    resid = model.residual(x)
    grad = model.jacobian(x).T @ resid
    if abs(math.log(params.tau1) - math.log(params.tau2)) < 1e-3:
        warnings.warn(
            f"time constants indistinguishable in {seg.soc_interval}: "
            f"tau1={params.tau1:.6g}, tau2={params.tau2:.6g}",
            DegeneracyWarning,
            stacklevel=2,
        )
    for label, (v, _) in zip(("1", "2"), model.sim.states(params)):
        peak = float(np.max(np.abs(v)))
        if peak < NEGLIGIBLE_PAIR_V:
            warnings.warn(
                f"RC pair {label} contributes at most {peak:.3g} V in {seg.soc_interval}; "
                "its parameters are not identifiable",
                DegeneracyWarning,
                stacklevel=2,
            )
    if not converged:
        log.warning("identification of %s did not converge in %d iterations", seg.soc_interval, iterations)
    m = residual_metrics(resid)
    return FitReport(
        params,
        m["rmse"],
        m["max_abs"],
        iterations,
        converged,
        objective=float(resid @ resid),
        gradient_norm=float(np.linalg.norm(grad)),
        history=tuple(history),
    )


def _identify_job(args):
    seg, ocv, q, guess, kwargs = args
    return identify_segment(seg, ocv, q, guess, **kwargs)


def identify_segments(segments, ocv, q, init_guess=None, workers: int = 1, **kwargs) -> list[FitReport]:
    """Identify every segment; results keep segment order regardless of ``workers``."""
    jobs = [(seg, ocv, q, init_guess, kwargs) for seg in segments]
    if workers <= 1 or len(jobs) <= 1:
        return [_identify_job(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_identify_job, jobs))


def build_schedule(reports) -> ParameterSchedule:
    """Assemble ``(interval, FitReport)`` pairs into a schedule with means and sample stdevs."""
    rows = []
    for interval, report in reports:
        params = report.params if isinstance(report, FitReport) else report
        rows.append((tuple(interval), params))
    rows.sort(key=lambda row: -row[0][0])
    for (a, _), (b, _) in zip(rows, rows[1:]):
        if b[0] > a[1]:
            raise ScheduleStructureError(f"intervals {a} and {b} overlap")
    return ParameterSchedule(tuple(rows))


CASES = {
    "case1": (),
    "case2": ("c1", "c2", "tau1"),
    "case3": PARAM_NAMES,
}


@dataclass(frozen=True)
class CaseResult:
    name: str
    fixed: tuple
    rmse: float
    max_abs: float
    error: np.ndarray = field(repr=False, compare=False)


def validate_cases(
    profile: CurrentProfile,
    voltage: VoltageTrace,
    schedule: ParameterSchedule,
    ocv: OcvCurve,
    cases=None,
    q: float = 1.0,
    z0: float = 1.0,
) -> list[CaseResult]:
    """Replay a measured cycle with some parameters frozen at their means.

    ``cases`` maps a case name to the parameter names held at their
    across-interval means; the default is case1 (none), case2
    (C1, C2, tau1) and case3 (all five).  The error trace is model minus
    measurement.
    """
    if cases is None:
        cases = CASES
    if len(voltage) != len(profile):
        raise InvalidInputError("current and voltage traces differ in length")
    init = CellState.rested(z0)
    results = []
    for name, fixed in cases.items():
        sched = schedule.with_fixed(fixed)
        trace = simulate(profile, CellConfig(q, ocv, sched), init)
        err = trace.samples - voltage.samples
        m = residual_metrics(err)
        results.append(CaseResult(name, tuple(fixed), m["rmse"], m["max_abs"], err))
    return results
