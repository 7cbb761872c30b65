"""Zero-delay Gaussian FIR filtering and histogram-based filter-order search.

The filter order is selected per ensemble by minimizing the height of the
minimum between the two peaks of the voltage histogram: heavier filtering
narrows the peaks but smears transition edges, so the inter-peak minimum
passes through an optimum.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .telegraph import ParameterError, Trace

SQRT_2LN2 = np.sqrt(2.0 * np.log(2.0))
DEFAULT_BINS = 256
MAX_ORDER = 501


class SeparationError(RuntimeError):
    """No filter order produced a bimodal voltage histogram."""


@dataclass
class GaussianFir:
    order: int
    taps: np.ndarray

    @property
    def half_width(self) -> int:
        return self.order // 2

    @property
    def bandwidth_3db(self) -> float:
        """3 dB frequency in cycles per sample (kernel sigma = order/6 samples)."""
        sigma = self.order / 6.0
        return np.sqrt(np.log(2.0)) / (2.0 * np.pi * sigma)


@dataclass
class HistogramStats:
    bimodal: bool
    v_h: float = np.nan
    v_l: float = np.nan
    v_m: float = np.nan
    w_h: float = np.nan
    w_l: float = np.nan
    h_min: float = np.nan
    snr: float = np.nan


def gaussian_fir(order: int) -> GaussianFir:
    """Sampled Gaussian kernel with sigma = order/6 samples, unit sum.

    The order must be odd so the kernel has a center tap (zero group
    delay).  order = 1 is the identity filter.
    """
    if order < 1 or order % 2 == 0:
        raise ParameterError("filter order must be a positive odd integer")
    if order == 1:
        return GaussianFir(1, np.array([1.0]))
    x = np.arange(order) - (order - 1) / 2.0
    sigma = order / 6.0
    taps = np.exp(-0.5 * (x / sigma) ** 2)
    taps = 0.5 * (taps + taps[::-1])  # enforce exact symmetry
    taps /= taps.sum()
    return GaussianFir(order, taps)


def apply_fir(trace: Trace, fir: GaussianFir) -> Trace:
    """Same-length zero-delay convolution with reflected edges."""
    x = trace.samples
    if x.size < fir.order:
        raise ParameterError("trace shorter than filter kernel")
    if fir.order == 1:
        return Trace(x.copy(), dt=trace.dt, seed=trace.seed, meta=dict(trace.meta))
    h = fir.half_width
    padded = np.pad(x, h, mode="reflect")
    out = np.convolve(padded, fir.taps, mode="valid")
    return Trace(out, dt=trace.dt, seed=trace.seed, meta=dict(trace.meta))


def _smooth3(h: np.ndarray) -> np.ndarray:
    # 3-bin moving average, ends handled by shrinking the window
    out = h.astype(float).copy()
    out[1:-1] = (h[:-2] + h[1:-1] + h[2:]) / 3.0
    out[0] = (h[0] + h[1]) / 2.0
    out[-1] = (h[-2] + h[-1]) / 2.0
    return out


def _half_crossing(centers, h, peak_idx, half, direction) -> float:
    """Voltage where h first falls to `half`, scanning away from the peak."""
    i = peak_idx
    n = len(h)
    while 0 <= i < n and h[i] > half:
        i += direction
    if i < 0 or i >= n:
        return abs(centers[min(max(i - direction, 0), n - 1)] - centers[peak_idx])
    # linear interpolation between bins i-direction and i
    j = i - direction
    if h[j] == h[i]:
        v = centers[i]
    else:
        frac = (h[j] - half) / (h[j] - h[i])
        v = centers[j] + frac * (centers[i] - centers[j])
    return abs(v - centers[peak_idx])


def histogram_stats(samples: np.ndarray, n_bins: int = DEFAULT_BINS,
                    n_independent: int | None = None) -> HistogramStats:
    """Bimodal peak statistics of a voltage sample distribution.

    The histogram (normalized to unit total) is lightly smoothed before
    peak finding.  The two most prominent peaks -- with a prominence
    floor set by the Poisson counting noise, so statistical wiggles on a
    peak flank are not mistaken for modes -- define the voltage levels;
    the HWHM of each peak is taken on its outward side (above the high
    peak, below the low peak), which stays well defined even when the
    peaks overlap.

    For correlated samples (e.g. low-pass filtered traces), pass the
    effective number of independent samples so the counting-noise floor
    is not underestimated.
    """
    from scipy.signal import find_peaks

    samples = np.asarray(samples).ravel()
    if n_bins < 16:
        raise ParameterError("need at least 16 bins")
    counts, edges = np.histogram(samples, bins=n_bins)
    centers = 0.5 * (edges[:-1] + edges[1:])
    h = _smooth3(counts / counts.sum())
    # counting-noise scale of a 3-bin-smoothed normalized histogram
    n_eff = samples.size if n_independent is None else max(1, n_independent)
    noise = np.sqrt(max(h.max(), 1e-300) / (3.0 * n_eff))
    peaks, props = find_peaks(h, prominence=5.0 * noise)
    if peaks.size < 2:
        return HistogramStats(bimodal=False)
    top2 = np.argsort(props["prominences"])[::-1][:2]
    lo, hi = sorted(int(p) for p in peaks[top2])
    if hi - lo < 2:
        return HistogramStats(bimodal=False)
    i_min = lo + 1 + int(np.argmin(h[lo + 1:hi]))
    if not (h[i_min] < h[lo] and h[i_min] < h[hi]):
        return HistogramStats(bimodal=False)
    return _peak_stats(centers, h, lo, hi, i_min)


def _peak_stats(centers, h, lo, hi, i_min) -> HistogramStats:
    v_l, v_h = centers[lo], centers[hi]
    w_l = _half_crossing(centers, h, lo, h[lo] / 2.0, -1)
    w_h = _half_crossing(centers, h, hi, h[hi] / 2.0, +1)
    snr = SQRT_2LN2 * (v_h - v_l) / (w_h + w_l)
    return HistogramStats(bimodal=True, v_h=v_h, v_l=v_l, v_m=centers[i_min],
                          w_h=w_h, w_l=w_l, h_min=h[i_min], snr=snr)


def order_schedule(max_order: int = MAX_ORDER) -> list[int]:
    """Odd orders growing by ~1.6x: 1, 3, 5, 9, 15, 25, 41, 67, ..."""
    orders = [1]
    while orders[-1] < max_order:
        nxt = int(round(orders[-1] * 1.6))
        if nxt % 2 == 0:
            nxt += 1
        nxt = max(nxt, orders[-1] + 2)
        orders.append(min(nxt, max_order))
    return orders


def filter_ensemble(traces: list[Trace], fir: GaussianFir) -> list[Trace]:
    return [apply_fir(t, fir) for t in traces]


def optimal_filter(traces: list[Trace], n_bins: int = DEFAULT_BINS,
                   max_order: int = MAX_ORDER):
    """Select the filter order minimizing the inter-peak histogram minimum.

    Orders from the multiplicative schedule are applied to the whole
    ensemble.  Non-bimodal histograms force further filtering; once
    bimodal, the search stops after h_min has increased for two
    consecutive orders.  Returns (order, stats, filtered traces).

    Raises SeparationError if no order up to max_order yields bimodality.
    """
    if not traces:
        raise ParameterError("empty trace ensemble")
    best_order = None
    best_stats = None
    n_increasing = 0
    prev_hmin = None
    # a kernel spanning a sizable fraction of the trace cannot resolve any
    # transition and only leaves slow noise wander that fakes bimodality
    order_cap = max(1, min(t.samples.size for t in traces) // 4)
    for order in order_schedule(max_order):
        if order > order_cap:
            break
        fir = gaussian_fir(order)
        pooled = np.concatenate([apply_fir(t, fir).samples for t in traces])
        stats = histogram_stats(pooled, n_bins,
                                n_independent=pooled.size // order)
        if not stats.bimodal:
            continue
        if best_stats is None or stats.h_min < best_stats.h_min:
            best_order, best_stats = order, stats
        if prev_hmin is not None and stats.h_min > prev_hmin:
            n_increasing += 1
            if n_increasing >= 2:
                break
        else:
            n_increasing = 0
        prev_hmin = stats.h_min
    if best_stats is None:
        raise SeparationError("cannot separate states: histogram never bimodal")
    filtered = filter_ensemble(traces, gaussian_fir(best_order))
    return best_order, best_stats, filtered
