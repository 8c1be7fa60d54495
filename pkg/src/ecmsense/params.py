"""ECM parameter sets and per-SOC-interval parameter schedules.

SOC intervals are written ``(hi, lo)`` in percent and are half-open from
below: a state of charge ``z`` (fraction) belongs to ``(hi, lo)`` when
``lo/100 < z <= hi/100``.  Comparisons carry a small absolute tolerance
(:data:`EDGE_TOL`) so that Coulomb-counted values landing on an edge up to
rounding are assigned consistently.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidInputError, ScheduleStructureError, SchemaError, SocRangeError

PARAM_NAMES = ("tau1", "tau2", "c1", "c2", "rs")
EDGE_TOL = 1e-9

# degenerate "no second pair" values; v2 stays below ~1e-13 V for A-scale, hour-long inputs
DEGENERATE_TAU = 1e9
DEGENERATE_C = 1e15


@dataclass(frozen=True)
class ParameterSet:
    """Five ECM parameters for one SOC interval.

    Time constants are in seconds, capacitances in farads and the series
    resistance in ohms.  The pair with the smaller time constant is always
    stored first (ties broken by capacitance); constructing in the other
    order swaps the two RC pairs, which leaves the model output unchanged.
    """

    tau1: float
    tau2: float
    c1: float
    c2: float
    rs: float

    def __post_init__(self):
        for f in fields(self):
            value = float(getattr(self, f.name))
            if not math.isfinite(value) or value <= 0.0:
                raise InvalidInputError(f"{f.name} must be positive and finite, got {value!r}")
            object.__setattr__(self, f.name, value)
        if (self.tau1, self.c1) > (self.tau2, self.c2):
            t1, c1 = self.tau1, self.c1
            object.__setattr__(self, "tau1", self.tau2)
            object.__setattr__(self, "c1", self.c2)
            object.__setattr__(self, "tau2", t1)
            object.__setattr__(self, "c2", c1)

    @property
    def r1(self) -> float:
        return self.tau1 / self.c1

    @property
    def r2(self) -> float:
        return self.tau2 / self.c2

    def as_array(self) -> np.ndarray:
        return np.array([self.tau1, self.tau2, self.c1, self.c2, self.rs])

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "ParameterSet":
        return cls(*(float(v) for v in values))

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def replace(self, **changes) -> "ParameterSet":
        return replace(self, **changes)

    @classmethod
    def single_rc(cls, tau1: float, c1: float, rs: float) -> "ParameterSet":
        """One active RC pair; the second is pushed to the degenerate limit."""
        return cls(tau1, DEGENERATE_TAU, c1, DEGENERATE_C, rs)

    @classmethod
    def series_resistor(cls, rs: float) -> "ParameterSet":
        return cls(DEGENERATE_TAU, DEGENERATE_TAU, DEGENERATE_C, DEGENERATE_C, rs)


def _check_interval(interval) -> tuple[float, float]:
    hi, lo = (float(v) for v in interval)
    if not (math.isfinite(hi) and math.isfinite(lo)) or not 0.0 <= lo < hi <= 100.0:
        raise ScheduleStructureError(f"bad SOC interval {interval!r}: need 0 <= lo < hi <= 100")
    return hi, lo


def intervals_from_edges(edges: Sequence[float]) -> list[tuple[float, float]]:
    """``[100, 90, 80]`` -> ``[(100, 90), (90, 80)]``; edges in percent, strictly descending."""
    edges = [float(e) for e in edges]
    if len(edges) < 2:
        raise InvalidInputError("need at least two SOC edges")
    if any(b >= a for a, b in zip(edges, edges[1:])):
        raise InvalidInputError(f"SOC edges must be strictly descending, got {edges}")
    return [_check_interval((a, b)) for a, b in zip(edges, edges[1:])]


def interval_label(interval) -> str:
    hi, lo = interval
    return f"[{hi:g}%,{lo:g}%)"


def locate(z, edges: Sequence[float]) -> np.ndarray:
    """Interval index for each SOC value.

    ``edges`` are descending percent bounds.  Returns ``-1`` above the top
    edge and ``len(edges) - 1`` below the bottom edge.
    """
    z = np.asarray(z, dtype=float)
    frac = np.asarray(edges, dtype=float) / 100.0
    # number of edges at or above z, edge-tolerant
    return np.sum(z[..., None] <= frac[None, :] + EDGE_TOL, axis=-1) - 1


@dataclass(frozen=True)
class ParameterSchedule:
    """Per-SOC-interval parameter table.

    Parameters
    ----------
    intervals : sequence of ``((hi, lo), ParameterSet)``
        Contiguous, descending, non-overlapping SOC intervals in percent.
    fixed_mask : five flags in :data:`PARAM_NAMES` order
        A set flag replaces that parameter by its across-interval mean on
        lookup.
    interpolation : ``"piecewise"`` or ``"linear"``
        Piecewise-constant lookup, or linear interpolation between interval
        midpoints (held constant beyond the outer midpoints).
    """

    intervals: tuple
    fixed_mask: tuple = (False,) * 5
    interpolation: str = "piecewise"
    means: ParameterSet = field(init=False, repr=False, compare=False)
    stdevs: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        rows = []
        for interval, params in self.intervals:
            if not isinstance(params, ParameterSet):
                raise InvalidInputError("schedule entries must be ParameterSet instances")
            rows.append((_check_interval(interval), params))
        if not rows:
            raise ScheduleStructureError("schedule needs at least one interval")
        for (a, _), (b, _) in zip(rows, rows[1:]):
            if b[0] > a[1]:
                raise ScheduleStructureError(
                    f"intervals {interval_label(a)} and {interval_label(b)} overlap or are out of order"
                )
            if b[0] < a[1]:
                raise ScheduleStructureError(
                    f"gap between {interval_label(a)} and {interval_label(b)}"
                )
        mask = tuple(bool(m) for m in self.fixed_mask)
        if len(mask) != len(PARAM_NAMES):
            raise InvalidInputError("fixed_mask needs one flag per parameter")
        if self.interpolation not in ("piecewise", "linear"):
            raise InvalidInputError(f"unknown interpolation {self.interpolation!r}")
        object.__setattr__(self, "intervals", tuple(rows))
        object.__setattr__(self, "fixed_mask", mask)

        table = self.table()
        # shifted mean: identical rows give back exactly that row
        means = table[0] + (table - table[0]).mean(axis=0)
        object.__setattr__(self, "means", ParameterSet.from_array(means))
        if len(rows) > 1:
            sd = table.std(axis=0, ddof=1)
        else:
            sd = np.zeros(len(PARAM_NAMES))
        object.__setattr__(self, "stdevs", tuple(float(s) for s in sd))

    @classmethod
    def constant(cls, params: ParameterSet, interval=(100.0, 0.0)) -> "ParameterSchedule":
        return cls(((interval, params),))

    def table(self) -> np.ndarray:
        """Parameters as an ``(n_intervals, 5)`` array."""
        return np.array([p.as_array() for _, p in self.intervals])

    @property
    def interval_list(self) -> list[tuple[float, float]]:
        return [iv for iv, _ in self.intervals]

    @property
    def edges(self) -> list[float]:
        return [self.intervals[0][0][0]] + [iv[1] for iv, _ in self.intervals]

    @property
    def params(self) -> list[ParameterSet]:
        return [p for _, p in self.intervals]

    def stdev_set(self) -> dict:
        return dict(zip(PARAM_NAMES, self.stdevs))

    def with_fixed(self, names: Iterable[str]) -> "ParameterSchedule":
        names = set(names)
        unknown = names - set(PARAM_NAMES)
        if unknown:
            raise InvalidInputError(f"unknown parameter names {sorted(unknown)}")
        return replace(self, fixed_mask=tuple(n in names for n in PARAM_NAMES))

    def with_interpolation(self, mode: str) -> "ParameterSchedule":
        return replace(self, interpolation=mode)

    def check_coverage(self, z) -> None:
        """Raise :class:`SocRangeError` at the first sample outside the schedule."""
        z = np.asarray(z, dtype=float)
        top = self.edges[0] / 100.0 + EDGE_TOL
        bottom = self.edges[-1] / 100.0 - EDGE_TOL
        bad = np.flatnonzero((z > top) | (z < bottom) | ~np.isfinite(z))
        if bad.size:
            k = int(bad[0])
            raise SocRangeError(
                f"SOC {z[k]:.6g} at sample {k} is outside schedule coverage "
                f"[{self.edges[-1]:g}%, {self.edges[0]:g}%]",
                index=k,
            )

    def lookup(self, z) -> np.ndarray:
        """Parameter values at each SOC, shape ``(len(z), 5)``.

        Fixed parameters take their mean; pairs are re-canonicalized so that
        ``tau1 <= tau2`` per sample.
        """
        z = np.atleast_1d(np.asarray(z, dtype=float))
        self.check_coverage(z)
        table = self.table()
        if self.interpolation == "piecewise" or len(self.intervals) == 1:
            idx = np.clip(locate(z, self.edges), 0, len(self.intervals) - 1)
            out = table[idx]
        else:
            mids = np.array([(hi + lo) / 200.0 for (hi, lo), _ in self.intervals])
            order = np.argsort(mids)
            out = np.column_stack(
                [np.interp(z, mids[order], table[order, j]) for j in range(len(PARAM_NAMES))]
            )
        if any(self.fixed_mask):
            means = self.means.as_array()
            for j, fixed in enumerate(self.fixed_mask):
                if fixed:
                    out[:, j] = means[j]
        swap = out[:, 0] > out[:, 1]
        if np.any(swap):
            out = out.copy()
            out[swap] = out[swap][:, [1, 0, 3, 2, 4]]
        return out

    def params_at(self, z: float) -> ParameterSet:
        return ParameterSet.from_array(self.lookup([z])[0])

    def to_dict(self) -> dict:
        return {
            "format": "ecmsense-schedule",
            "version": 1,
            "interpolation": self.interpolation,
            "parameters": list(PARAM_NAMES),
            "intervals": [
                {"soc_hi_percent": hi, "soc_lo_percent": lo, **p.as_dict()}
                for (hi, lo), p in self.intervals
            ],
            "means": self.means.as_dict(),
            "stdevs": self.stdev_set(),
            "fixed_mask": {n: m for n, m in zip(PARAM_NAMES, self.fixed_mask)},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ParameterSchedule":
        try:
            rows = [
                (
                    (row["soc_hi_percent"], row["soc_lo_percent"]),
                    ParameterSet(*(row[n] for n in PARAM_NAMES)),
                )
                for row in data["intervals"]
            ]
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"schedule file missing field: {exc}") from exc
        mask = data.get("fixed_mask", {})
        return cls(
            tuple(rows),
            fixed_mask=tuple(bool(mask.get(n, False)) for n in PARAM_NAMES),
            interpolation=data.get("interpolation", "piecewise"),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ParameterSchedule":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
