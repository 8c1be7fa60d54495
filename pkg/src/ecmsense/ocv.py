"""Open-circuit-voltage curve: sweep averaging and polynomial fitting."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.polynomial import Polynomial
from numpy.polynomial import chebyshev as C
from scipy.linalg import solve_triangular

from .errors import ConditioningError, InvalidInputError, ParseError, SchemaError, SocRangeError
from .params import EDGE_TOL

DIRECTIONS = ("charge", "discharge", "average")


@dataclass(frozen=True)
class OcvSweep:
    """OCV samples against SOC fraction, stored with an ascending grid."""

    grid: np.ndarray
    voltages: np.ndarray
    direction: str = "average"

    def __post_init__(self):
        grid = np.array(self.grid, dtype=float)
        volts = np.array(self.voltages, dtype=float)
        if grid.ndim != 1 or grid.shape != volts.shape:
            raise InvalidInputError("grid and voltages must be 1-D and of equal length")
        if grid.size < 2 or not (np.all(np.isfinite(grid)) and np.all(np.isfinite(volts))):
            raise InvalidInputError("sweep needs at least two finite points")
        if self.direction not in DIRECTIONS:
            raise InvalidInputError(f"direction must be one of {DIRECTIONS}")
        if grid[0] > grid[-1]:
            grid, volts = grid[::-1].copy(), volts[::-1].copy()
        if np.any(np.diff(grid) <= 0):
            raise InvalidInputError("sweep grid must be strictly monotone")
        for arr in (grid, volts):
            arr.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "voltages", volts)

    @property
    def range(self) -> tuple[float, float]:
        return float(self.grid[0]), float(self.grid[-1])

    def restrict(self, lo: float, hi: float) -> "OcvSweep":
        keep = (self.grid >= lo - EDGE_TOL) & (self.grid <= hi + EDGE_TOL)
        return OcvSweep(self.grid[keep], self.voltages[keep], self.direction)


@dataclass(frozen=True)
class OcvCurve:
    """Polynomial OCV in monomial form, ``sum(a_k * z**k)``, valid on ``valid_range``."""

    coefficients: tuple
    valid_range: tuple = (0.0, 1.0)
    fit_residuals: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        coeffs = tuple(float(a) for a in self.coefficients)
        if len(coeffs) < 2 or not all(math.isfinite(a) for a in coeffs):
            raise InvalidInputError("OCV curve needs degree >= 1 and finite coefficients")
        lo, hi = (float(v) for v in self.valid_range)
        if not 0.0 <= lo < hi <= 1.0:
            raise InvalidInputError(f"valid range must satisfy 0 <= lo < hi <= 1, got {self.valid_range}")
        object.__setattr__(self, "coefficients", coeffs)
        object.__setattr__(self, "valid_range", (lo, hi))

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def evaluate(self, z):
        return eval_ocv(self, z)

    def derivative(self, z):
        """Analytic dV/dz."""
        z = np.asarray(z, dtype=float)
        acc = np.zeros_like(z)
        for k in range(self.degree, 0, -1):
            acc = acc * z + k * self.coefficients[k]
        return acc

    def to_dict(self) -> dict:
        return {
            "format": "ecmsense-ocv",
            "version": 1,
            "degree": self.degree,
            "valid_range": list(self.valid_range),
            "coefficients": list(self.coefficients),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "OcvCurve":
        try:
            coeffs = data["coefficients"]
            rng = data["valid_range"]
        except KeyError as exc:
            raise SchemaError(f"OCV curve file missing field {exc}") from exc
        if "degree" in data and int(data["degree"]) != len(coeffs) - 1:
            raise SchemaError("degree does not match the number of coefficients")
        return cls(tuple(coeffs), tuple(rng))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "OcvCurve":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def eval_ocv(curve: OcvCurve, z):
    """Horner evaluation; SOC outside the valid range raises :class:`SocRangeError`."""
    scalar = np.ndim(z) == 0
    z = np.atleast_1d(np.asarray(z, dtype=float))
    lo, hi = curve.valid_range
    bad = np.flatnonzero(~((z >= lo - EDGE_TOL) & (z <= hi + EDGE_TOL)))
    if bad.size:
        k = int(bad[0])
        raise SocRangeError(
            f"SOC {z[k]:.6g} at sample {k} is outside the OCV valid range [{lo:g}, {hi:g}]",
            index=k,
        )
    acc = np.full_like(z, curve.coefficients[-1])
    for a in reversed(curve.coefficients[:-1]):
        acc = acc * z + a
    return float(acc[0]) if scalar else acc


def average_sweeps(charge: OcvSweep, discharge: OcvSweep, n_points: int | None = None) -> OcvSweep:
    """Pointwise mean of two sweeps on their shared SOC range.

    Both sweeps are linearly interpolated onto ``n_points`` uniformly spaced
    SOC values (default: the longer sweep's length) before averaging.
    """
    lo = max(charge.range[0], discharge.range[0])
    hi = min(charge.range[1], discharge.range[1])
    if not lo < hi:
        raise SocRangeError(
            f"sweeps do not overlap: {charge.range} vs {discharge.range}"
        )
    n = n_points or max(charge.grid.size, discharge.grid.size)
    grid = np.linspace(lo, hi, n)
    vc = np.interp(grid, charge.grid, charge.voltages)
    vd = np.interp(grid, discharge.grid, discharge.voltages)
    return OcvSweep(grid, 0.5 * (vc + vd), "average")


def _as_points(sweep):
    if isinstance(sweep, OcvSweep):
        return sweep.grid, sweep.voltages
    z, v = sweep
    return np.asarray(z, dtype=float), np.asarray(v, dtype=float)


def fit_polynomial(sweep, degree: int = 10) -> OcvCurve:
    """Least-squares polynomial OCV fit.

    The problem is solved by QR in a Chebyshev basis on the sweep range and
    the result converted to monomial coefficients in ``z``.  ``sweep`` may
    also be a ``(z, v)`` pair of arrays in any order.
    """
    z, v = _as_points(sweep)
    degree = int(degree)
    if degree < 1:
        raise InvalidInputError("degree must be at least 1")
    if z.shape != v.shape or z.ndim != 1:
        raise InvalidInputError("grid and voltages must be 1-D and of equal length")
    if np.unique(z).size < z.size:
        raise ConditioningError("duplicate SOC grid points")
    if z.size < degree + 1:
        raise ConditioningError(f"{z.size} points cannot determine a degree-{degree} polynomial")

    lo, hi = float(z.min()), float(z.max())
    scale = 2.0 / (hi - lo)
    shift = -(hi + lo) / (hi - lo)
    basis = C.chebvander(z * scale + shift, degree)
    q, r = np.linalg.qr(basis)
    diag = np.abs(np.diag(r))
    if diag.min() <= 1e-12 * diag.max():
        raise ConditioningError("design matrix is numerically rank deficient")
    cheb = solve_triangular(r, q.T @ v)

    power_x = Polynomial(C.cheb2poly(cheb))
    in_z = power_x(Polynomial([shift, scale]))
    coeffs = np.zeros(degree + 1)
    coeffs[: in_z.coef.size] = in_z.coef
    curve = OcvCurve(tuple(coeffs), (lo, hi))
    # residuals of the stored monomial form, which is what callers evaluate
    residuals = v - eval_ocv(curve, z)
    residuals.setflags(write=False)
    return OcvCurve(curve.coefficients, curve.valid_range, fit_residuals=residuals)


def fit_metrics(curve: OcvCurve, sweep) -> dict:
    """RMSE and maximum absolute residual of ``curve`` against ``sweep``, volts."""
    z, v = _as_points(sweep)
    return residual_metrics(v - eval_ocv(curve, z))


def residual_metrics(residuals) -> dict:
    resid = np.asarray(residuals, dtype=float)
    return {
        "rmse": float(np.sqrt(np.mean(resid**2))),
        "max_abs": float(np.max(np.abs(resid))),
    }


def read_sweep_csv(path, direction: str = "average") -> OcvSweep:
    """Read ``soc_percent,voltage_v`` rows."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["soc_percent", "voltage_v"]:
            raise SchemaError(f"{path}: expected header 'soc_percent,voltage_v'", line=1)
        soc, volts = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                soc.append(float(row[0]) / 100.0)
                volts.append(float(row[1]))
            except (ValueError, IndexError) as exc:
                raise ParseError(f"{path}:{lineno}: {exc}", line=lineno) from exc
    return OcvSweep(np.array(soc), np.array(volts), direction)


def write_sweep_csv(path, sweep: OcvSweep) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["soc_percent", "voltage_v"])
        for z, v in zip(sweep.grid, sweep.voltages):
            writer.writerow([repr(float(z * 100.0)), repr(float(v))])
