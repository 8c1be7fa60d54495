"""Second-order RC equivalent circuit model with exact ZOH discretization.

State is ``(v1, v2, z)``: the voltages across the two RC pairs and the
normalized state of charge.  Current is positive while discharging.  Over a
sample of length ``dt`` with constant current ``i`` each RC voltage evolves
exactly as::

    v' = v * exp(-dt/tau) + (tau/C) * (1 - exp(-dt/tau)) * i

and the terminal voltage at sample ``k`` is computed from the state before
the step, ``V = OCV(z) - v1 - v2 - i * Rs``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.signal import lfilter

from .errors import ClampWarning, InvalidInputError, SocRangeError
from .params import ParameterSchedule, ParameterSet

MAH_TO_COULOMB = 3.6


def mah_to_coulombs(mah: float) -> float:
    return float(mah) * MAH_TO_COULOMB


@dataclass(frozen=True)
class CellState:
    v1: float = 0.0
    v2: float = 0.0
    z: float = 1.0
    clamped: bool = field(default=False, compare=False)

    def __post_init__(self):
        for name in ("v1", "v2", "z"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise InvalidInputError(f"{name} must be finite, got {value!r}")
            object.__setattr__(self, name, value)
        if not 0.0 <= self.z <= 1.0:
            raise InvalidInputError(f"SOC must lie in [0, 1], got {self.z!r}")

    @classmethod
    def rested(cls, z: float) -> "CellState":
        return cls(0.0, 0.0, z)


@dataclass(frozen=True)
class CurrentProfile:
    """Uniformly sampled current, amperes, positive on discharge."""

    dt: float
    samples: np.ndarray
    start_time: float = 0.0

    def __post_init__(self):
        dt = float(self.dt)
        if not math.isfinite(dt) or dt <= 0:
            raise InvalidInputError(f"dt must be positive, got {self.dt!r}")
        samples = np.array(self.samples, dtype=float)
        if samples.ndim != 1 or samples.size < 2:
            raise InvalidInputError("a current profile needs at least two samples")
        if not np.all(np.isfinite(samples)):
            raise InvalidInputError("current samples must be finite")
        samples.setflags(write=False)
        object.__setattr__(self, "dt", dt)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "start_time", float(self.start_time))

    def __len__(self):
        return self.samples.size

    @property
    def times(self) -> np.ndarray:
        return self.start_time + self.dt * np.arange(self.samples.size)

    @property
    def duration(self) -> float:
        return self.dt * self.samples.size

    def slice(self, start: int, stop: int) -> "CurrentProfile":
        return CurrentProfile(self.dt, self.samples[start:stop], self.start_time + start * self.dt)

    def __add__(self, other: "CurrentProfile") -> "CurrentProfile":
        if other.dt != self.dt or len(other) != len(self):
            raise InvalidInputError("profiles must share dt and length to be added")
        return CurrentProfile(self.dt, self.samples + other.samples, self.start_time)


@dataclass(frozen=True)
class VoltageTrace:
    """Terminal voltage aligned with a current profile.

    ``soc`` holds the SOC used at each sample and ``final_state`` the state
    after the last step; both are populated by :func:`simulate`.
    """

    dt: float
    samples: np.ndarray
    soc: np.ndarray | None = None
    final_state: CellState | None = None
    clamped: bool = False

    def __post_init__(self):
        samples = np.array(self.samples, dtype=float)
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "dt", float(self.dt))

    def __len__(self):
        return self.samples.size


@dataclass(frozen=True)
class CellConfig:
    """Capacity in coulombs, an OCV curve and the parameters.

    ``schedule`` may be a :class:`ParameterSchedule` or a single
    :class:`ParameterSet` that applies at every SOC.
    """

    capacity_q: float
    ocv: object
    schedule: Union[ParameterSchedule, ParameterSet]

    def __post_init__(self):
        q = float(self.capacity_q)
        if not math.isfinite(q) or q <= 0:
            raise InvalidInputError(f"capacity must be positive, got {self.capacity_q!r}")
        object.__setattr__(self, "capacity_q", q)

    @classmethod
    def from_mah(cls, capacity_mah: float, ocv, schedule) -> "CellConfig":
        return cls(mah_to_coulombs(capacity_mah), ocv, schedule)


def _rc_coefficients(tau, c, dt):
    decay = np.exp(-dt / tau)
    gain = (tau / c) * -np.expm1(-dt / tau)
    return decay, gain


def step(state: CellState, params: ParameterSet, cfg: CellConfig, i_k: float, dt: float) -> CellState:
    """Advance the cell by one ZOH sample of current ``i_k``.

    The returned state has ``clamped=True`` when the SOC had to be clipped
    to [0, 1].
    """
    i_k = float(i_k)
    dt = float(dt)
    if not math.isfinite(i_k) or not math.isfinite(dt):
        raise InvalidInputError("current and dt must be finite")
    if dt <= 0:
        raise InvalidInputError(f"dt must be positive, got {dt!r}")
    a1, b1 = _rc_coefficients(params.tau1, params.c1, dt)
    a2, b2 = _rc_coefficients(params.tau2, params.c2, dt)
    z = state.z - i_k * dt / cfg.capacity_q
    clamped = not 0.0 <= z <= 1.0
    return CellState(
        float(state.v1 * a1 + b1 * i_k),
        float(state.v2 * a2 + b2 * i_k),
        min(max(z, 0.0), 1.0),
        clamped,
    )


def coulomb_count(profile: CurrentProfile, q: float, z0: float) -> np.ndarray:
    """SOC by left-Riemann integration of the current.

    Returns ``len(profile) + 1`` values: the SOC at each sample time before
    that sample's current is applied, followed by the SOC at the end of the
    profile.  Values are not clamped.
    """
    q = float(q)
    z0 = float(z0)
    if not math.isfinite(q) or q <= 0:
        raise InvalidInputError(f"capacity must be positive, got {q!r}")
    if not 0.0 <= z0 <= 1.0:
        raise InvalidInputError(f"initial SOC must lie in [0, 1], got {z0!r}")
    charge = np.concatenate(([0.0], np.cumsum(profile.samples)))
    return z0 - (profile.dt / q) * charge


def _soc_trajectory(profile: CurrentProfile, q: float, z0: float) -> tuple[np.ndarray, bool]:
    z = coulomb_count(profile, q, z0)
    if np.all((z >= 0.0) & (z <= 1.0)):
        return z, False
    # clip sample by sample so that charge after a clamp is not lost
    out = np.empty_like(z)
    out[0] = z0
    scale = profile.dt / q
    for k, i_k in enumerate(profile.samples):
        out[k + 1] = min(max(out[k] - i_k * scale, 0.0), 1.0)
    return out, True


def _parameter_track(schedule, z: np.ndarray) -> np.ndarray:
    if isinstance(schedule, ParameterSet):
        return np.broadcast_to(schedule.as_array(), (z.size, 5))
    return schedule.lookup(z)


def _rc_run(current, tau, c, dt, v0):
    """Exact response of one RC pair with constant parameters; returns states after each step."""
    a, b = _rc_coefficients(tau, c, dt)
    y, _ = lfilter([b], [1.0, -a], current, zi=[a * v0])
    return y


def _rc_track(current, tau, c, dt, v0):
    """RC voltages before each step (length n) and the final voltage."""
    n = current.size
    before = np.empty(n)
    change = np.flatnonzero((np.diff(tau) != 0) | (np.diff(c) != 0)) + 1
    starts = np.concatenate(([0], change))
    stops = np.concatenate((change, [n]))
    v = float(v0)
    if len(starts) > n // 8 + 1:
        a, b = _rc_coefficients(tau, c, dt)
        for k in range(n):
            before[k] = v
            v = v * a[k] + b[k] * current[k]
        return before, v
    for s, e in zip(starts, stops):
        after = _rc_run(current[s:e], tau[s], c[s], dt, v)
        before[s] = v
        before[s + 1 : e] = after[:-1]
        v = float(after[-1])
    return before, v


def simulate(profile: CurrentProfile, cfg: CellConfig, init: CellState | None = None) -> VoltageTrace:
    """Terminal voltage for a current profile.

    Parameters are looked up from ``cfg.schedule`` at the SOC of each
    sample.  ``init`` defaults to a rested cell at full charge.  Raises
    :class:`SocRangeError` naming the first sample whose SOC falls outside
    the OCV curve's valid range or the schedule's coverage.  A SOC clamp
    emits :class:`ClampWarning` and sets ``clamped`` on the result.
    """
    if init is None:
        init = CellState()
    current = profile.samples
    z_all, clamped = _soc_trajectory(profile, cfg.capacity_q, init.z)
    if clamped:
        warnings.warn("SOC clamped to [0, 1] during simulation", ClampWarning, stacklevel=2)
    z = z_all[:-1]
    track = _parameter_track(cfg.schedule, z)
    ocv = cfg.ocv.evaluate(z)

    v1, v1_end = _rc_track(current, track[:, 0], track[:, 2], profile.dt, init.v1)
    v2, v2_end = _rc_track(current, track[:, 1], track[:, 3], profile.dt, init.v2)
    volts = ocv - v1 - v2 - current * track[:, 4]
    final = CellState(v1_end, v2_end, float(z_all[-1]))
    return VoltageTrace(profile.dt, volts, soc=z, final_state=final, clamped=clamped)


class FixedProfileSimulator:
    """Repeated simulation of one profile under different constant parameter sets.

    The SOC trajectory and OCV track do not depend on the RC parameters or
    Rs, so they are computed once.  ``clamped`` reports whether the SOC
    had to be clipped.
    """

    def __init__(self, profile: CurrentProfile, capacity_q: float, ocv, init: CellState | None = None):
        self.profile = profile
        self.init = init if init is not None else CellState()
        self.q = float(capacity_q)
        z_all, self.clamped = _soc_trajectory(profile, self.q, self.init.z)
        self.soc = z_all[:-1]
        self.final_soc = float(z_all[-1])
        self.ocv = np.asarray(ocv.evaluate(self.soc))

    def states(self, params: ParameterSet):
        """RC voltages before each sample and after the last, for both pairs."""
        current = self.profile.samples
        dt = self.profile.dt
        out = []
        for tau, c, v0 in ((params.tau1, params.c1, self.init.v1), (params.tau2, params.c2, self.init.v2)):
            after = _rc_run(current, tau, c, dt, v0)
            before = np.empty_like(after)
            before[0] = v0
            before[1:] = after[:-1]
            out.append((before, float(after[-1])))
        return out

    def voltage(self, params: ParameterSet) -> np.ndarray:
        (v1, _), (v2, _) = self.states(params)
        return self.ocv - v1 - v2 - self.profile.samples * params.rs

    def trace(self, params: ParameterSet) -> VoltageTrace:
        (v1, e1), (v2, e2) = self.states(params)
        volts = self.ocv - v1 - v2 - self.profile.samples * params.rs
        final = CellState(e1, e2, self.final_soc)
        return VoltageTrace(self.profile.dt, volts, soc=self.soc, final_state=final, clamped=self.clamped)


def simulate_states(profile: CurrentProfile, params: ParameterSet, init: CellState | None = None):
    """RC voltages ``(v1, v2)`` before each sample for constant parameters."""
    if init is None:
        init = CellState()
    n = len(profile)
    v1, _ = _rc_track(profile.samples, np.full(n, params.tau1), np.full(n, params.c1), profile.dt, init.v1)
    v2, _ = _rc_track(profile.samples, np.full(n, params.tau2), np.full(n, params.c2), profile.dt, init.v2)
    return v1, v2


__all__ = [
    "CellConfig",
    "CellState",
    "CurrentProfile",
    "FixedProfileSimulator",
    "SocRangeError",
    "VoltageTrace",
    "coulomb_count",
    "mah_to_coulombs",
    "simulate",
    "simulate_states",
    "step",
]
