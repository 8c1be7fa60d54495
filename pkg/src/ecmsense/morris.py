"""Morris and enhanced-Morris screening by Monte Carlo one-at-a-time runs.

Each run draws a start point ``theta`` from independent normals, then for
every parameter ``i`` perturbs only that entry by ``delta * sigma_i`` and
records the elementary effect::

    xi_i = reduce(y(theta) - y(theta_hat_i)) / delta

Note the sign: output at the start point minus output at the perturbed
point, which is the negative of the more common forward-difference
convention.  ``reduce`` collapses a time series to a scalar: the signed
time mean (default) or the time RMS.  The Morris statistic is the mean of
``xi_i`` over runs, the enhanced statistic the mean of ``|xi_i|``.

Run ``k`` of interval ``j`` draws from its own Philox stream keyed on
``(seed, j, k)``, so reports do not depend on worker count or scheduling.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .ecm import CellState, CurrentProfile, FixedProfileSimulator, coulomb_count
from .errors import EmptyCellError, InvalidInputError, SamplingError
from .params import PARAM_NAMES, ParameterSchedule, ParameterSet, interval_label

REDUCTIONS = ("mean", "rms")
MAX_DRAWS = 100


class InvalidRun(Exception):
    """A single Monte Carlo run cannot be evaluated (SOC clamp, non-positive parameter)."""


@dataclass(frozen=True)
class ParameterDistribution:
    """Independent normal distribution per parameter; ``sigma`` is a standard deviation."""

    mu: np.ndarray
    sigma: np.ndarray
    names: tuple = PARAM_NAMES
    positive: bool = True

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float)
        sigma = np.array(self.sigma, dtype=float)
        names = tuple(self.names)
        if mu.shape != sigma.shape or mu.shape != (len(names),):
            raise InvalidInputError("mu, sigma and names must have matching lengths")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))) or np.any(sigma < 0):
            raise InvalidInputError("mu must be finite and sigma finite and non-negative")
        if self.positive and np.any(mu <= 0):
            raise InvalidInputError("mean parameter set must be positive")
        mu.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "names", names)

    @classmethod
    def from_schedule(cls, schedule: ParameterSchedule) -> "ParameterDistribution":
        """Across-interval means and sample standard deviations."""
        return cls(schedule.means.as_array(), np.array(schedule.stdevs))

    @classmethod
    def centred_on(cls, params: ParameterSet, schedule: ParameterSchedule) -> "ParameterDistribution":
        """One interval's parameters as the mean, across-interval spread as sigma."""
        return cls(params.as_array(), np.array(schedule.stdevs))

    def scaled(self, factor: float) -> "ParameterDistribution":
        return ParameterDistribution(self.mu, self.sigma * factor, self.names, self.positive)


@dataclass(frozen=True)
class MorrisConfig:
    n_runs: int = 1024
    delta: float = 1.0
    seed: int = 0
    reduction: str = "mean"
    resample_on_invalid: bool = False
    workers: int = 1

    def __post_init__(self):
        if int(self.n_runs) < 1:
            raise InvalidInputError("n_runs must be at least 1")
        if not float(self.delta) > 0 or not math.isfinite(float(self.delta)):
            raise InvalidInputError("delta must be positive")
        if self.reduction not in REDUCTIONS:
            raise InvalidInputError(f"reduction must be one of {REDUCTIONS}")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidInputError("seed must be an unsigned 64-bit integer")


def run_rng(seed: int, interval_index: int, run_index: int) -> np.random.Generator:
    """Counter-keyed generator for one run."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(interval_index), int(run_index)))
    return np.random.Generator(np.random.Philox(ss))


def sample_start_point(dist: ParameterDistribution, rng: np.random.Generator) -> np.ndarray:
    """Draw a start point as an array ordered like ``dist.names``.

    With ``dist.positive`` any draw with a non-positive entry is discarded
    and the whole vector redrawn, at most 100 times.
    """
    for _ in range(MAX_DRAWS):
        theta = dist.mu + dist.sigma * rng.standard_normal(dist.mu.size)
        if not dist.positive or np.all(theta > 0):
            return theta
    raise SamplingError(
        f"no positive draw in {MAX_DRAWS} attempts; sigma is too large relative to mu "
        "(truncate sigma or reparameterize)"
    )


def reduce_trace(diff, reduction: str) -> float:
    diff = np.atleast_1d(diff)
    if reduction == "mean":
        return float(np.mean(diff))
    return float(np.sqrt(np.mean(diff * diff)))


def elementary_effect(
    theta,
    i: int,
    dist: ParameterDistribution,
    cfg: MorrisConfig,
    model,
    base=None,
) -> float:
    """Elementary effect of parameter ``i`` at start point ``theta``.

    ``model`` maps a parameter vector to an output array.  ``base`` may
    carry a precomputed ``model(theta)``.  Raises :class:`InvalidRun` when
    the perturbed parameter is non-positive or the model reports a SOC
    clamp.
    """
    sigma = float(dist.sigma[i])
    if sigma == 0.0:
        return 0.0
    theta = np.asarray(theta, dtype=float)
    perturbed = theta.copy()
    perturbed[i] = theta[i] + cfg.delta * sigma
    if dist.positive and perturbed[i] <= 0:
        raise InvalidRun(f"perturbed {dist.names[i]} is non-positive")
    y0 = model(theta) if base is None else base
    y1 = model(perturbed)
    return reduce_trace(np.asarray(y0) - np.asarray(y1), cfg.reduction) / cfg.delta


class EcmModel:
    """Terminal voltage of the ECM over a fixed profile, as a function of the five parameters.

    Parameters are constant over the profile.  The SOC trajectory does not
    depend on the parameters, so a clamp is detected once and makes every
    run invalid.
    """

    def __init__(self, profile: CurrentProfile, ocv, q: float, init: CellState):
        z = coulomb_count(profile, q, init.z)
        self.clamped = bool(np.any((z < 0.0) | (z > 1.0)))
        self.sim = None if self.clamped else FixedProfileSimulator(profile, q, ocv, init)

    def __call__(self, theta) -> np.ndarray:
        if self.clamped:
            raise InvalidRun("SOC clamp during simulation")
        return self.sim.voltage(ParameterSet.from_array(theta))


class LinearModel:
    """``y = sum(c_i * theta_i)``; the default is ``theta1 + 5 * theta2``."""

    def __init__(self, coefficients=(1.0, 5.0)):
        self.coefficients = np.asarray(coefficients, dtype=float)

    def __call__(self, theta) -> np.ndarray:
        return np.array([float(np.dot(self.coefficients, theta))])


def linear_demo_distribution() -> ParameterDistribution:
    return ParameterDistribution([0.0, 0.0], [10.0, 1.0], names=("theta1", "theta2"), positive=False)


def _one_run(dist, cfg, model, j, k):
    """Effects for every parameter in run ``k`` of interval ``j``; NaN marks an invalid effect."""
    rng = run_rng(cfg.seed, j, k)
    attempts = MAX_DRAWS if cfg.resample_on_invalid else 1
    xi = np.full(len(dist.names), np.nan)
    for _ in range(attempts):
        theta = sample_start_point(dist, rng)
        try:
            base = model(theta) if np.any(dist.sigma > 0) else None
        except InvalidRun:
            continue
        for i in range(len(dist.names)):
            try:
                xi[i] = elementary_effect(theta, i, dist, cfg, model, base)
            except InvalidRun:
                xi[i] = np.nan
        if not cfg.resample_on_invalid or not np.any(np.isnan(xi)):
            break
    return xi


def _run_block(args):
    dist, cfg, model, j, runs = args
    return j, runs, np.array([_one_run(dist, cfg, model, j, k) for k in runs])


@dataclass(frozen=True)
class SensitivityReport:
    """Per-interval, per-parameter Morris statistics.

    ``xi`` has shape ``(n_intervals, n_runs, n_parameters)`` with NaN for
    invalid runs; the summary arrays have shape
    ``(n_intervals, n_parameters)``.
    """

    intervals: tuple
    names: tuple
    xi: np.ndarray = field(repr=False)
    config: MorrisConfig = field(default_factory=MorrisConfig)

    @property
    def n_effective(self) -> np.ndarray:
        return np.sum(~np.isnan(self.xi), axis=1)

    @property
    def morris_mean(self) -> np.ndarray:
        return _nanmean(self.xi)

    @property
    def enhanced_mean(self) -> np.ndarray:
        return _nanmean(np.abs(self.xi))

    @property
    def stdev_of_xi(self) -> np.ndarray:
        n = self.n_effective
        mean = self.morris_mean
        dev = np.where(np.isnan(self.xi), 0.0, self.xi - mean[:, None, :])
        ss = np.sum(dev * dev, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(n > 1, np.sqrt(ss / np.maximum(n - 1, 1)), 0.0)

    def cell(self, interval, name: str) -> dict:
        j = self.intervals.index(interval)
        i = self.names.index(name)
        return {
            "morris_mean": float(self.morris_mean[j, i]),
            "enhanced_mean": float(self.enhanced_mean[j, i]),
            "stdev_of_xi": float(self.stdev_of_xi[j, i]),
            "n_effective": int(self.n_effective[j, i]),
        }

    def rows(self):
        mm, em, sd, ne = self.morris_mean, self.enhanced_mean, self.stdev_of_xi, self.n_effective
        for j, interval in enumerate(self.intervals):
            for i, name in enumerate(self.names):
                yield {
                    "soc_interval": _label(interval),
                    "parameter": name,
                    "morris_mean_v": float(mm[j, i]),
                    "enhanced_mean_v": float(em[j, i]),
                    "stdev_v": float(sd[j, i]),
                    "n_effective": int(ne[j, i]),
                }

    def write_csv(self, path) -> None:
        cols = ["soc_interval", "parameter", "morris_mean_v", "enhanced_mean_v", "stdev_v", "n_effective"]
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(cols)
            for row in self.rows():
                writer.writerow([_fmt(row[c]) for c in cols])

    def write_raw_csv(self, path) -> None:
        """Long format, one row per (interval, parameter, run)."""
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["soc_interval", "parameter", "run", "xi_v"])
            for j, interval in enumerate(self.intervals):
                label = _label(interval)
                for i, name in enumerate(self.names):
                    for k, value in enumerate(self.xi[j, :, i]):
                        writer.writerow([label, name, k, _fmt(float(value))])


def _nanmean(a):
    n = np.sum(~np.isnan(a), axis=1)
    total = np.nansum(a, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(n > 0, total / np.maximum(n, 1), np.nan)


def _label(interval) -> str:
    if isinstance(interval, tuple) and len(interval) == 2:
        return interval_label(interval)
    return str(interval)


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return value


def run_morris(
    dist,
    cfg: MorrisConfig,
    model,
    intervals: Sequence,
) -> SensitivityReport:
    """Morris screening for every interval.

    ``dist`` and ``model`` are either single objects shared by all
    intervals or sequences with one entry per interval.  Raises
    :class:`EmptyCellError` when every run of some (interval, parameter)
    cell is invalid.
    """
    intervals = tuple(intervals)
    n_int = len(intervals)
    dists = list(dist) if isinstance(dist, (list, tuple)) else [dist] * n_int
    models = list(model) if isinstance(model, (list, tuple)) else [model] * n_int
    if len(dists) != n_int or len(models) != n_int:
        raise InvalidInputError("need one distribution and one model per interval")
    names = dists[0].names
    if any(d.names != names for d in dists):
        raise InvalidInputError("all distributions must share parameter names")

    n = int(cfg.n_runs)
    workers = max(1, int(cfg.workers))
    chunk = max(1, -(-n // (4 * workers)))
    blocks = [
        (dists[j], cfg, models[j], j, range(s, min(n, s + chunk)))
        for j in range(n_int)
        for s in range(0, n, chunk)
    ]
    xi = np.empty((n_int, n, len(names)))
    if workers == 1:
        results = map(_run_block, blocks)
        for j, runs, values in results:
            xi[j, runs.start : runs.stop] = values
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for j, runs, values in pool.map(_run_block, blocks):
                xi[j, runs.start : runs.stop] = values

    empty = np.argwhere(np.all(np.isnan(xi), axis=1))
    if empty.size:
        j, i = empty[0]
        raise EmptyCellError(
            f"every run invalid for interval {_label(intervals[j])}, parameter {names[i]}"
        )
    return SensitivityReport(intervals, names, xi, cfg)


def rank_parameters(report: SensitivityReport) -> dict:
    """Parameters per interval by descending enhanced mean; ties by name."""
    if report.xi.size == 0:
        raise InvalidInputError("empty report")
    em = report.enhanced_mean
    ranking = {}
    for j, interval in enumerate(report.intervals):
        order = sorted(range(len(report.names)), key=lambda i: (-em[j, i], report.names[i]))
        ranking[interval] = [report.names[i] for i in order]
    return ranking


def least_important(report: SensitivityReport, count: int = 3) -> tuple:
    """The ``count`` parameters with the smallest interval-averaged enhanced mean."""
    avg = report.enhanced_mean.mean(axis=0)
    order = sorted(range(len(report.names)), key=lambda i: (avg[i], report.names[i]))
    return tuple(report.names[i] for i in order[:count])
