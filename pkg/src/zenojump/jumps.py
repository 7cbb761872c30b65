"""Hysteretic (Schmitt-trigger) state detection and dwell-time extraction.

From a filtered trace, the qubit state flips only when the voltage crosses
the far threshold: upward through t_high from the low state, downward
through t_low from the high state.  The final dwell of every trace is
right-censored by the end of the record.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .filterbank import HistogramStats
from .telegraph import STATE_A, STATE_B, ParameterError, StatePath, Trace

TWO_LN2 = 2.0 * np.log(2.0)


@dataclass
class Thresholds:
    t_high: float
    t_low: float

    def __post_init__(self):
        if self.t_low > self.t_high:
            raise ParameterError("t_low must not exceed t_high")


@dataclass
class DwellRecord:
    """One residence interval in a state; the unit of statistical evidence."""

    state: str  # STATE_A (low) or STATE_B (high)
    duration: float  # us
    censored: bool
    trace_id: int = 0


def thresholds_from_stats(stats: HistogramStats) -> Thresholds:
    """Hysteretic thresholds from bimodal histogram statistics.

    t_high = v_m + w_h^2 / (2 ln2 (v_h - v_l)) and symmetrically below for
    t_low, so the hysteresis widens as the peaks broaden.
    """
    if not stats.bimodal:
        raise ParameterError("thresholds require bimodal histogram statistics")
    span = stats.v_h - stats.v_l
    t_high = stats.v_m + stats.w_h ** 2 / (TWO_LN2 * span)
    t_low = stats.v_m - stats.w_l ** 2 / (TWO_LN2 * span)
    return Thresholds(t_high=t_high, t_low=t_low)


def state_sequence(samples: np.ndarray, th: Thresholds, v_m: float) -> np.ndarray:
    """Boolean per-sample state (True = high) under Schmitt-trigger rules.

    The initial state compares the first sample with v_m.  A transition
    registers at the first sample at-or-beyond the far threshold; no
    sub-sample interpolation is used.
    """
    x = np.asarray(samples)
    trig = np.zeros(x.size, dtype=np.int8)
    trig[x <= th.t_low] = -1
    trig[x >= th.t_high] = 1
    trig[0] = 1 if x[0] >= v_m else -1
    # forward-fill the last nonzero trigger value
    idx = np.arange(x.size)
    known = np.where(trig != 0, idx, 0)
    np.maximum.accumulate(known, out=known)
    return trig[known] > 0


def _dwells_from_bool(is_high: np.ndarray, dt: float, trace_id: int) -> list[DwellRecord]:
    flips = np.flatnonzero(is_high[1:] != is_high[:-1]) + 1
    bounds = np.concatenate(([0], flips, [is_high.size]))
    dwells = []
    for i in range(len(bounds) - 1):
        n = bounds[i + 1] - bounds[i]
        state = STATE_B if is_high[bounds[i]] else STATE_A
        censored = i == len(bounds) - 2
        dwells.append(DwellRecord(state=state, duration=n * dt,
                                  censored=censored, trace_id=trace_id))
    return dwells


def extract_dwells(trace: Trace, th: Thresholds, v_m: float,
                   trace_id: int = 0) -> list[DwellRecord]:
    """Dwell records from one filtered trace; exactly one is censored."""
    is_high = state_sequence(trace.samples, th, v_m)
    return _dwells_from_bool(is_high, trace.dt, trace_id)


def dwells_from_path(path: StatePath, trace_id: int = 0) -> list[DwellRecord]:
    """Dwell records straight from a known state path (no thresholding)."""
    durations, states = path.dwell_times()
    n = len(durations)
    return [DwellRecord(state=STATE_B if states[i] else STATE_A,
                        duration=float(durations[i]), censored=i == n - 1,
                        trace_id=trace_id)
            for i in range(n)]


def write_dwell_csv(path, dwells: list[DwellRecord]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["trace_id", "state", "duration_us", "censored"])
        for d in dwells:
            w.writerow([d.trace_id, d.state, f"{d.duration:.9g}", int(d.censored)])


def read_dwell_csv(path) -> list[DwellRecord]:
    dwells = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            dwells.append(DwellRecord(state=row["state"],
                                      duration=float(row["duration_us"]),
                                      censored=bool(int(row["censored"])),
                                      trace_id=int(row["trace_id"])))
    return dwells
