"""Drive-cycle CSV ingestion and the run configuration file."""

from __future__ import annotations

import configparser
import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .ecm import CurrentProfile, VoltageTrace
from .errors import GapWarning, InvalidInputError, ParseError, SchemaError
from .params import PARAM_NAMES

log = logging.getLogger(__name__)

DRIVE_COLUMNS = ("time_s", "current_a", "voltage_v")


@dataclass(frozen=True)
class DriveCycle:
    profile: CurrentProfile
    voltage: VoltageTrace | None
    n_original: int
    gaps: tuple = ()


def _read_rows(path):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: empty file", line=1)
        header = [h.strip() for h in header]
        missing = [c for c in DRIVE_COLUMNS[:2] if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}", line=1)
        cols = [header.index(c) for c in DRIVE_COLUMNS if c in header]
        rows = []
        lines = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append([float(row[c]) for c in cols])
            except (ValueError, IndexError) as exc:
                raise ParseError(f"{path}:{lineno}: {exc}", line=lineno) from exc
            lines.append(lineno)
    return path, np.array(rows, dtype=float).reshape(-1, len(cols)), lines, "voltage_v" in header


def load_drive_cycle(path, resample_dt: float | None = None, gap_factor: float = 5.0) -> DriveCycle:
    """Read ``time_s,current_a[,voltage_v]`` and hold each value until the next row.

    The uniform grid starts at the first time stamp and runs through the
    last one.  ``resample_dt`` defaults to the median original spacing.
    Intervals longer than ``gap_factor * dt`` are reported as gaps with a
    :class:`GapWarning`.
    """
    path, data, lines, has_voltage = _read_rows(path)
    if data.shape[0] < 2:
        raise ParseError(f"{path}: need at least two data rows")
    t = data[:, 0]
    steps = np.diff(t)
    bad = np.flatnonzero(~(steps > 0))
    if bad.size:
        lineno = lines[int(bad[0]) + 1]
        raise ParseError(f"{path}:{lineno}: time is not strictly increasing", line=lineno)
    if not np.all(np.isfinite(data)):
        k = int(np.argwhere(~np.isfinite(data))[0][0])
        raise ParseError(f"{path}:{lines[k]}: non-finite value", line=lines[k])

    span = t[-1] - t[0]
    uniform_dt = span / (t.size - 1)
    uniform = bool(np.all(np.abs(steps - uniform_dt) <= 1e-6 * uniform_dt))
    if resample_dt is None:
        dt = uniform_dt if uniform else float(np.median(steps))
    else:
        dt = float(resample_dt)
    if not dt > 0 or not math.isfinite(dt):
        raise InvalidInputError(f"resample dt must be positive, got {resample_dt!r}")
    if uniform and abs(dt - uniform_dt) <= 1e-9 * uniform_dt:
        # already on the requested grid; skip resampling so text round-off cannot shift samples
        dt = uniform_dt
        idx = np.arange(t.size)
    else:
        n = int(math.floor(span / dt + 1e-6)) + 1
        grid = t[0] + dt * np.arange(n)
        idx = np.searchsorted(t, grid + 1e-6 * dt, side="right") - 1
    n = idx.size

    gaps = tuple((float(t[k]), float(t[k + 1])) for k in np.flatnonzero(steps > gap_factor * dt))
    for a, b in gaps:
        warnings.warn(f"{path}: {b - a:g} s gap between t={a:g} s and t={b:g} s", GapWarning, stacklevel=2)

    profile = CurrentProfile(dt, data[idx, 1], start_time=float(t[0]))
    voltage = VoltageTrace(dt, data[idx, 2]) if has_voltage else None
    if idx.size == t.size and uniform:
        log.info("%s: %d uniform samples at dt=%g s", path, n, dt)
    else:
        log.info("%s: %d rows resampled to %d samples at dt=%g s", path, data.shape[0], n, dt)
    return DriveCycle(profile, voltage, int(data.shape[0]), gaps)


def write_drive_cycle(path, profile: CurrentProfile, voltage=None) -> None:
    """Write a profile (and optional voltage) with full-precision floats."""
    times = profile.times
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if voltage is None:
            writer.writerow(DRIVE_COLUMNS[:2])
            for t, i in zip(times, profile.samples):
                writer.writerow([repr(float(t)), repr(float(i))])
        else:
            volts = voltage.samples if isinstance(voltage, VoltageTrace) else np.asarray(voltage)
            if len(volts) != len(profile):
                raise InvalidInputError("voltage and current lengths differ")
            writer.writerow(DRIVE_COLUMNS)
            for t, i, v in zip(times, profile.samples, volts):
                writer.writerow([repr(float(t)), repr(float(i)), repr(float(v))])


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def _names(text: str) -> tuple:
    return tuple(v.strip() for v in text.split(",") if v.strip())


@dataclass
class RunConfig:
    """Everything a CLI run needs; file paths are resolved against ``base_dir``."""

    base_dir: Path = field(default_factory=Path.cwd)

    # [paths]
    ocv_sweep_charge: str = "ocv_charge.csv"
    ocv_sweep_discharge: str = "ocv_discharge.csv"
    ocv_curve: str = "ocv_curve.json"
    drive_cycle: str = "train_cycle.csv"
    validation_cycle: str = "validation_cycle.csv"
    schedule: str = "schedule.json"
    sensitivity: str = "sensitivity.csv"

    # [cell]
    capacity_mah: float = 740.0
    initial_soc_percent: float = 100.0
    soc_edges_percent: tuple = (100.0, 90.0, 80.0, 70.0, 60.0, 50.0, 40.0, 30.0, 20.0, 10.0)
    ocv_degree: int = 10
    ocv_fit_range_percent: tuple = (5.0, 100.0)
    resample_dt: float | None = None

    # [morris]
    n_runs: int = 1024
    delta: float = 1.0
    seed: int | None = None
    reduction: str = "mean"
    resample_on_invalid: bool = False
    centre: str = "mean"
    workers: int = 1

    # [identify]
    max_iter: int = 200
    ftol: float = 1e-10
    xtol: float = 1e-8
    rest_current_a: float | None = None
    rest_duration_s: float = 60.0
    init_guess: dict = field(default_factory=dict)

    # [validate]
    fixed_case2: tuple = ("c1", "c2", "tau1")

    # [synthetic]
    dt: float = 0.1
    block_mean_a: float = 0.5
    rest_s: float = 3600.0
    noise_rms_v: float = 0.001
    validation_mean_a: float = 0.5
    validation_soc_drop: float = 0.78

    _SECTIONS = {
        "paths": ("ocv_sweep_charge", "ocv_sweep_discharge", "ocv_curve", "drive_cycle",
                  "validation_cycle", "schedule", "sensitivity"),
        "cell": ("capacity_mah", "initial_soc_percent", "soc_edges_percent", "ocv_degree",
                 "ocv_fit_range_percent", "resample_dt"),
        "morris": ("n_runs", "delta", "seed", "reduction", "resample_on_invalid", "centre", "workers"),
        "identify": ("max_iter", "ftol", "xtol", "rest_current_a", "rest_duration_s", "init_guess"),
        "validate": ("fixed_case2",),
        "synthetic": ("dt", "block_mean_a", "rest_s", "noise_rms_v", "validation_mean_a",
                      "validation_soc_drop"),
    }

    def __post_init__(self):
        self.base_dir = Path(self.base_dir)
        self.validate()

    def validate(self) -> None:
        checks = [
            (self.capacity_mah > 0, "capacity_mah must be positive"),
            (0 <= self.initial_soc_percent <= 100, "initial_soc_percent must be in [0, 100]"),
            (self.ocv_degree >= 1, "ocv_degree must be >= 1"),
            (self.n_runs >= 1, "n_runs must be >= 1"),
            (self.delta > 0, "delta must be positive"),
            (self.reduction in ("mean", "rms"), "reduction must be mean or rms"),
            (self.centre in ("mean", "interval"), "centre must be mean or interval"),
            (self.workers >= 1, "workers must be >= 1"),
            (self.max_iter >= 1, "max_iter must be >= 1"),
            (self.dt > 0, "dt must be positive"),
            (self.seed is None or 0 <= self.seed < 2**64, "seed must be an unsigned 64-bit integer"),
            (set(self.fixed_case2) <= set(PARAM_NAMES) or self.fixed_case2 == ("auto",),
             "fixed_case2 must list parameter names or be 'auto'"),
            (set(self.init_guess) <= set(PARAM_NAMES), "unknown init_guess parameter"),
        ]
        edges = self.soc_edges_percent
        checks.append((len(edges) >= 2 and all(b < a for a, b in zip(edges, edges[1:])),
                       "soc_edges_percent must be strictly descending"))
        lo, hi = self.ocv_fit_range_percent
        checks.append((0 <= lo < hi <= 100, "ocv_fit_range_percent must satisfy 0 <= lo < hi <= 100"))
        for ok, message in checks:
            if not ok:
                raise InvalidInputError(f"config: {message}")

    def path(self, key: str) -> Path:
        p = Path(getattr(self, key))
        return p if p.is_absolute() else self.base_dir / p

    def require(self, *keys: str) -> None:
        """Check that the files named by ``keys`` exist."""
        for key in keys:
            if not self.path(key).is_file():
                raise FileNotFoundError(f"config [{self._section_of(key)}] {key}: {self.path(key)} not found")

    def _section_of(self, key):
        for section, keys in self._SECTIONS.items():
            if key in keys:
                return section
        raise KeyError(key)

    @property
    def capacity_q(self) -> float:
        return self.capacity_mah * 3.6

    @classmethod
    def parse(cls, text: str, base_dir=None) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ParseError(f"config: {exc}") from exc
        types = {f.name: f.type for f in fields(cls)}
        defaults = cls(base_dir=base_dir or Path.cwd())
        kwargs = {"base_dir": base_dir or Path.cwd()}
        for section in parser.sections():
            if section not in cls._SECTIONS:
                raise SchemaError(f"config: unknown section [{section}]")
            for key, raw in parser.items(section):
                if section == "identify" and key.startswith("init_"):
                    name = key[len("init_"):]
                    kwargs.setdefault("init_guess", {})[name] = float(raw)
                    continue
                if key not in cls._SECTIONS[section]:
                    raise SchemaError(f"config: unknown key {key!r} in [{section}]")
                kwargs[key] = _convert(key, raw, types[key], getattr(defaults, key))
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        return cls.parse(path.read_text(encoding="utf-8"), base_dir=path.parent)

    def to_text(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        for section, keys in self._SECTIONS.items():
            parser.add_section(section)
            for key in keys:
                value = getattr(self, key)
                if key == "init_guess":
                    for name in PARAM_NAMES:
                        if name in value:
                            parser.set(section, f"init_{name}", repr(float(value[name])))
                    continue
                if value is None:
                    continue
                parser.set(section, key, _render(value))
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_render(v) if not isinstance(v, str) else v for v in value)
    return str(value)


def _convert(key, raw: str, annotation, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, tuple):
            return _names(raw) if key == "fixed_case2" else _floats(raw)
        if raw.lower() in ("", "none"):
            return None
        if "int" in str(annotation) and "float" not in str(annotation):
            return int(raw)
        if "float" in str(annotation):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ParseError(f"config: bad value for {key}: {raw!r}") from exc
