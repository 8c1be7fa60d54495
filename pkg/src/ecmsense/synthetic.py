"""Synthetic drive cycles, OCV sweeps and ground-truth cells.

The drive cycles are surrogates built from random smoothed pulses; they
share the character of urban driving profiles (accelerate, cruise,
regenerate, stop) but are not reproductions of any standard schedule.
"""

from __future__ import annotations

import numpy as np

from .ecm import CellConfig, CellState, CurrentProfile, VoltageTrace, simulate
from .errors import InvalidInputError
from .ocv import OcvSweep
from .params import ParameterSchedule, ParameterSet, intervals_from_edges

CYCLE_KINDS = ("fuds-like", "udc-like", "constant", "prbs")

# (accel amplitude, accel s, cruise amplitude, cruise s, regen amplitude, regen s, stop s)
_TRIP_STATS = {
    "fuds-like": ((0.6, 1.4), (8, 40), (0.15, 0.45), (10, 60), (0.1, 0.35), (4, 12), (10, 120)),
    "udc-like": ((0.4, 1.0), (5, 25), (0.1, 0.3), (5, 30), (0.1, 0.3), (3, 10), (10, 40)),
}


def _smooth(x, dt):
    width = max(3, int(round(5.0 / dt)) | 1)
    # np.convolve "same" returns the longer of the two lengths
    width = min(width, x.size - 1 + x.size % 2)
    kernel = np.hanning(width + 2)[1:-1]
    return np.convolve(x, kernel / kernel.sum(), mode="same")


def _pulse_train(kind, n, dt, scale, rng):
    """Random trips followed by a regen-free coast-down hump.

    The hump returns more charge than the body's final drawdown, so the
    cumulative discharge reaches its final value only at the last sample.
    """
    (a_amp, a_dur, c_amp, c_dur, r_amp, r_dur, s_dur) = _TRIP_STATS[kind]
    tail = min(n // 2, max(2, int(round(60.0 / dt))))
    body_len = n - tail
    out = []
    total = 0
    while total < body_len:
        for amp, dur in (
            (rng.uniform(*a_amp), a_dur),
            (rng.uniform(*c_amp), c_dur),
            (-rng.uniform(*r_amp), r_dur),
            (0.0, s_dur),
        ):
            length = max(1, int(round(rng.uniform(*dur) / dt)))
            out.append(np.full(length, amp * scale))
            total += length
    body = _smooth(np.concatenate(out)[:body_len], dt)
    charge = np.cumsum(body[::-1])[::-1]  # charge from each sample to the end of the body
    drawdown = max(0.0, -float(charge.min())) * dt if body_len else 0.0
    hump = np.sin(np.pi * (np.arange(tail) + 0.5) / tail)
    area = max(rng.uniform(*a_amp) * scale * tail * dt / 2, 2.0 * drawdown)
    hump *= area / (hump.sum() * dt)
    return np.concatenate([body, hump])


def generate_synthetic_cycle(
    kind: str,
    duration: float,
    scale: float = 1.0,
    seed: int = 0,
    dt: float = 1.0,
    mean: float | None = None,
    bit_period: float = 10.0,
) -> CurrentProfile:
    """Seeded surrogate current profile.

    ``fuds-like`` and ``udc-like`` are smoothed random pulse trains with a
    net discharge; ``mean`` rescales them so the average current hits that
    value exactly.  ``prbs`` alternates between ``-scale`` and ``+scale``
    at random every ``bit_period`` seconds.
    """
    if duration <= 0 or dt <= 0:
        raise InvalidInputError("duration and dt must be positive")
    if kind not in CYCLE_KINDS:
        raise InvalidInputError(f"unknown cycle kind {kind!r}; choose from {CYCLE_KINDS}")
    n = max(2, int(round(duration / dt)))
    rng = np.random.default_rng(seed)
    if kind == "constant":
        samples = np.full(n, float(scale))
    elif kind == "prbs":
        per_bit = max(1, int(round(bit_period / dt)))
        bits = rng.integers(0, 2, size=-(-n // per_bit))
        samples = np.repeat(np.where(bits == 1, float(scale), -float(scale)), per_bit)[:n]
    else:
        samples = _pulse_train(kind, n, dt, float(scale), rng)
    if mean is not None and kind in ("fuds-like", "udc-like"):
        samples = samples * (float(mean) / samples.mean())
    return CurrentProfile(dt, samples)


def discharge_test_cycle(
    q: float,
    n_blocks: int = 9,
    block_soc: float = 0.1,
    block_mean: float = 0.2,
    rest: float = 3600.0,
    dt: float = 1.0,
    seed: int = 0,
    kind: str = "fuds-like",
    scale: float = 1.0,
) -> CurrentProfile:
    """Blocks that each remove ``block_soc`` of charge, each followed by a rest."""
    ss = np.random.SeedSequence(seed)
    n = max(2, int(round(block_soc * q / block_mean / dt)))
    exact_mean = block_soc * q / (n * dt)  # removes exactly block_soc despite rounding n
    parts = []
    for child in ss.spawn(n_blocks):
        block = generate_synthetic_cycle(
            kind, n * dt, scale, int(child.generate_state(1)[0]), dt, mean=exact_mean
        )
        parts.append(block.samples)
        parts.append(np.zeros(int(round(rest / dt))))
    return CurrentProfile(dt, np.concatenate(parts))


def generate_synthetic_cell(
    truth,
    ocv,
    q: float,
    profile: CurrentProfile,
    noise_rms: float = 0.0,
    seed: int = 0,
    z0: float = 1.0,
) -> VoltageTrace:
    """Simulate a ground-truth cell and add seeded Gaussian measurement noise."""
    clean = simulate(profile, CellConfig(q, ocv, truth), CellState.rested(z0))
    if noise_rms == 0:
        return clean
    rng = np.random.default_rng(seed)
    noisy = clean.samples + rng.normal(0.0, float(noise_rms), size=len(clean))
    return VoltageTrace(clean.dt, noisy, soc=clean.soc, final_state=clean.final_state, clamped=clean.clamped)


def reference_ocv_shape(z):
    """Smooth OCV-like shape: linear ramp plus a logistic knee at low SOC."""
    z = np.asarray(z, dtype=float)
    return 3.42 + 0.78 * z - 0.32 / (1.0 + np.exp((z - 0.06) / 0.035))


def reference_ocv_sweeps(n: int = 201, hysteresis: float = 0.02, noise: float = 0.0, seed: int = 0):
    """Charge and discharge sweeps around :func:`reference_ocv_shape`, charge above discharge."""
    grid = np.linspace(0.0, 1.0, n)
    base = reference_ocv_shape(grid)
    rng = np.random.default_rng(seed)
    jitter = rng.normal(0.0, noise, size=(2, n)) if noise else np.zeros((2, n))
    charge = OcvSweep(grid, base + hysteresis / 2 + jitter[0], "charge")
    discharge = OcvSweep(grid, base - hysteresis / 2 + jitter[1], "discharge")
    return charge, discharge


def reference_truth_schedule(edges=(100, 90, 80, 70, 60, 50, 40, 30, 20, 10)) -> ParameterSchedule:
    """Illustrative ground-truth cell whose parameters drift with SOC.

    Magnitudes are implementer-chosen for a small pouch cell; series
    resistance and the slow time constant vary strongly, the other three
    only mildly.  The slow pair is at least five times slower than the fast
    one in every interval.
    """
    intervals = intervals_from_edges(edges)
    rows = []
    for hi, lo in intervals:
        s = (hi + lo) / 200.0  # interval midpoint, fraction
        low = 1.0 - s  # 0 at full charge, 1 when empty
        params = ParameterSet(
            tau1=9.0 + 2.0 * low,
            tau2=60.0 + 110.0 * low**1.5,
            c1=450.0 - 50.0 * low,
            c2=2600.0 + 400.0 * low,
            rs=0.028 + 0.036 * low**2,
        )
        rows.append(((hi, lo), params))
    return ParameterSchedule(tuple(rows))
