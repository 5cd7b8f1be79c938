"""Changepoint-location posterior and the dilatation-point rule.

The most proximal posterior peak is attributed to the loss of cartilage
support along the airway and discarded; the highest remaining peak is the
starting point of dilatation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SMOOTH_WINDOW = 3
MIN_RELATIVE_HEIGHT = 0.05
MIN_SEPARATION_MM = 10.0


class NoChangepointError(RuntimeError):
    """The posterior has no peak to call."""


@dataclass
class PosteriorHistogram:
    """Pooled changepoint mass over grid positions.

    ``mass`` sums to one unless no changepoint was sampled, in which case it
    is all zero and ``empty`` is set.  Position ``i`` lies at ``x0 + i`` mm.
    """

    mass: np.ndarray
    empty: bool = False
    x0: float = 0.0

    def __post_init__(self):
        self.mass = np.asarray(self.mass, dtype=float)
        if np.any(self.mass < 0):
            raise ValueError("histogram mass must be non-negative")

    @property
    def n(self) -> int:
        return self.mass.size

    @classmethod
    def from_counts(cls, counts, x0: float = 0.0) -> "PosteriorHistogram":
        counts = np.asarray(counts, dtype=float)
        total = counts.sum()
        if total == 0:
            return cls(np.zeros_like(counts), empty=True, x0=x0)
        return cls(counts / total, x0=x0)


@dataclass
class Peak:
    location_mm: float
    mass: float
    index: int


@dataclass
class DilatationCall:
    point_mm: float
    peaks: list[Peak]
    discarded_proximal_peak: Peak | None = None
    histogram: PosteriorHistogram | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        d = self.discarded_proximal_peak
        out = {
            "point_mm": self.point_mm,
            "peaks": [[p.location_mm, p.mass] for p in self.peaks],
            "discarded": None if d is None else [d.location_mm, d.mass],
        }
        if self.histogram is not None:
            out["histogram"] = self.histogram.mass.tolist()
        return out


def pooled_histogram(trace, n: int | None = None, x0: float = 0.0) -> PosteriorHistogram:
    """Count every changepoint of every stored state, normalised to one.

    ``trace`` is a :class:`~airwaycpd.rjmh_sampler.ChainTrace` or any
    sequence of states with a ``tau`` attribute.
    """
    samples = getattr(trace, "samples", trace)
    if n is None:
        n = trace.n
    if len(samples) == 0:
        raise ValueError("trace holds no stored samples")
    tau = getattr(trace, "tau_matrix", None)
    if tau is not None:
        # -1 pads unused slots
        counts = np.bincount(tau[tau >= 0], minlength=n).astype(float)
    else:
        counts = np.zeros(n)
        for s in samples:
            for t in s.tau:
                counts[t] += 1
    return PosteriorHistogram.from_counts(counts, x0=x0)


def _moving_average(x: np.ndarray, window: int) -> np.ndarray:
    """Centred moving mean; windows are truncated at the edges."""
    k = np.ones(window)
    return np.convolve(x, k, mode="same") / np.convolve(np.ones_like(x), k, mode="same")


def find_peaks(hist: PosteriorHistogram) -> list[Peak]:
    """Local maxima of the 3-bin smoothed histogram.

    Maxima below 5% of the highest smoothed value are dropped; of two peaks
    closer than 10 mm only the larger survives.  A flat-topped maximum is
    located at its centre.  The reported location is the highest raw bin
    within the smoothing window (the smoothed maximum itself when it ties),
    and the mass is the raw mass inside that window.  Returned in increasing
    location.
    """
    mass = hist.mass
    if mass.size == 0 or not np.any(mass > 0):
        return []
    sm = _moving_average(mass, SMOOTH_WINDOW)
    floor = MIN_RELATIVE_HEIGHT * sm.max()
    half = SMOOTH_WINDOW // 2
    candidates = []
    i, n = 0, sm.size
    while i < n:
        j = i
        while j + 1 < n and sm[j + 1] == sm[i]:
            j += 1
        left_ok = i == 0 or sm[i - 1] < sm[i]
        right_ok = j == n - 1 or sm[j + 1] < sm[i]
        if left_ok and right_ok and sm[i] > 0 and sm[i] >= floor:
            c = (i + j) // 2
            window_mass = float(mass[max(c - half, 0) : c + half + 1].sum())
            candidates.append((sm[i], c, window_mass))
        i = j + 1

    kept: list[tuple[float, int, float]] = []
    # larger first; ties resolved towards the carina
    for height, c, w in sorted(candidates, key=lambda t: (-t[0], t[1])):
        if all(abs(c - k[1]) >= MIN_SEPARATION_MM for k in kept):
            kept.append((height, c, w))
    kept.sort(key=lambda t: t[1])
    peaks = []
    for _, c, w in kept:
        # smoothing finds the peak; the raw mode inside its window places it
        lo = max(c - half, 0)
        win = mass[lo : c + half + 1]
        i = lo + int(np.flatnonzero(win == win.max())[0]) if mass[c] < win.max() else c
        peaks.append(Peak(location_mm=hist.x0 + i, mass=w, index=i))
    return peaks


def select_dilatation_peak(peaks: list[Peak]) -> tuple[Peak, Peak | None]:
    """Drop the most proximal peak (if there are two or more) and return the
    highest remaining one, with the dropped peak."""
    if not peaks:
        raise NoChangepointError("no changepoint detected")
    peaks = sorted(peaks, key=lambda p: p.location_mm)
    if len(peaks) == 1:
        return peaks[0], None
    discarded, rest = peaks[0], peaks[1:]
    best = max(rest, key=lambda p: p.mass)
    return best, discarded


def call_dilatation_point(hist: PosteriorHistogram) -> DilatationCall:
    """Dilatation starting point from a changepoint posterior.

    Raises
    ------
    NoChangepointError
        If the histogram has no peak.
    """
    peaks = find_peaks(hist)
    best, discarded = select_dilatation_peak(peaks)
    return DilatationCall(
        point_mm=best.location_mm,
        peaks=peaks,
        discarded_proximal_peak=discarded,
        histogram=hist,
    )
