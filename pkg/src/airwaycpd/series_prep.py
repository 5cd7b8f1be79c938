"""Area series I/O, 1 mm resampling, pair alignment and log-differencing.

Index 0 of every series is the carina (proximal end); the last index is
the distal point.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

AREA_FLOOR = 1e-6
MAX_SHIFT = 5
WINDOW = 50
CSV_HEADER = ("arc_length_mm", "area_mm2")


class SeriesError(ValueError):
    """Input series violates the area-series invariants."""


class ParseError(SeriesError):
    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(where + message)


@dataclass(frozen=True, eq=False)
class AreaSeries:
    """Cross-sectional area sampled along an airway.

    ``arc_length`` is in mm from the carina, ``area`` in mm^2.  ``meta``
    records provenance such as the interpolation used when resampling.
    """

    arc_length: np.ndarray
    area: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.asarray(self.arc_length, dtype=float)
        a = np.asarray(self.area, dtype=float)
        object.__setattr__(self, "arc_length", x)
        object.__setattr__(self, "area", a)
        if x.ndim != 1 or x.shape != a.shape:
            raise SeriesError("arc_length and area must be 1-D of equal length")
        if x.size < 2:
            raise SeriesError(f"need at least 2 samples, got {x.size}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(a))):
            raise SeriesError("non-finite value in series")
        if x[0] < 0:
            raise SeriesError("arc lengths must be non-negative")
        if np.any(np.diff(x) <= 0):
            raise SeriesError("arc lengths must be strictly increasing")
        if np.any(a <= 0):
            raise SeriesError("areas must be strictly positive")

    def __len__(self) -> int:
        return self.area.size

    @property
    def on_unit_grid(self) -> bool:
        return bool(np.allclose(np.diff(self.arc_length), 1.0, rtol=0, atol=1e-9))


@dataclass(frozen=True, eq=False)
class AlignedPair:
    """Baseline and follow-up on a shared 1 mm grid of ``n`` samples.

    ``shift_a`` is the follow-up offset: ``followup[i]`` was read from the
    original follow-up at index ``i - shift_a`` (relative to the baseline).
    ``x0`` is the baseline arc length of index 0.
    """

    baseline: AreaSeries
    followup: AreaSeries
    shift_a: int
    n: int
    x0: float = 0.0
    objective: tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.baseline) != self.n or len(self.followup) != self.n:
            raise SeriesError("aligned series must both have n samples")


@dataclass(frozen=True, eq=False)
class LogDiffSeries:
    y: np.ndarray
    x0: float = 0.0

    @property
    def n(self) -> int:
        return self.y.size

    def to_record(self, shift_a: int | None = None) -> dict:
        rec = {"n": self.n, "x0": self.x0, "y": self.y.tolist()}
        if shift_a is not None:
            rec = {"shift_a": shift_a, **rec}
        return rec


# -- I/O -----------------------------------------------------------------

def parse_area_csv(text: str, source: str | None = None) -> AreaSeries:
    """Parse ``arc_length_mm,area_mm2`` CSV text.

    Raises
    ------
    ParseError
        With the offending (1-based) line number.
    """
    rows = csv.reader(io.StringIO(text))
    x, a = [], []
    header_seen = False
    for lineno, row in enumerate(rows, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        cells = tuple(c.strip() for c in row)
        if not header_seen:
            if cells != CSV_HEADER:
                raise ParseError(f"expected header {','.join(CSV_HEADER)!r}", lineno, source)
            header_seen = True
            continue
        if len(cells) != 2:
            raise ParseError(f"expected 2 fields, got {len(cells)}", lineno, source)
        try:
            xi, ai = float(cells[0]), float(cells[1])
        except ValueError:
            raise ParseError(f"not a number: {row!r}", lineno, source) from None
        if not (math.isfinite(xi) and math.isfinite(ai)):
            raise ParseError("non-finite value", lineno, source)
        if ai <= 0:
            raise ParseError(f"area must be positive, got {ai}", lineno, source)
        if x and xi <= x[-1]:
            raise ParseError("arc length not increasing", lineno, source)
        x.append(xi)
        a.append(ai)
    if not header_seen:
        raise ParseError("empty file", None, source)
    if len(x) < 2:
        raise ParseError(f"need at least 2 samples, got {len(x)}", None, source)
    return AreaSeries(np.array(x), np.array(a), {"source": source} if source else {})


def read_area_csv(path) -> AreaSeries:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_area_csv(fh.read(), source=os.fspath(path))


def write_area_csv(series: AreaSeries, fh) -> None:
    fh.write(",".join(CSV_HEADER) + "\n")
    for x, a in zip(series.arc_length.tolist(), series.area.tolist()):
        fh.write(f"{x!r},{a!r}\n")


# -- resampling and alignment -------------------------------------------

def resample_to_1mm(series: AreaSeries) -> AreaSeries:
    """Cubic-spline resampling onto ``x0, x0 + 1, ...`` up to the last arc
    length, where ``x0`` is the first arc length (0 for carina-referenced
    input).

    With 2 or 3 input samples the spline is replaced by linear
    interpolation and ``meta["interpolation"]`` says so.  Areas are floored
    at ``AREA_FLOOR`` to keep logs finite.
    """
    x, a = series.arc_length, series.area
    grid = x[0] + np.arange(int(math.floor(x[-1] - x[0] + 1e-9)) + 1, dtype=float)
    if x.size >= 4:
        # not-a-knot end conditions reproduce cubics exactly
        values = CubicSpline(x, a)(grid)
        kind = "cubic"
    else:
        values = np.interp(grid, x, a)
        kind = "linear"
    clamped = int(np.sum(values < AREA_FLOOR))
    values = np.maximum(values, AREA_FLOOR)
    meta = {**series.meta, "interpolation": kind, "clamped": clamped}
    return AreaSeries(grid, values, meta)


def alignment_objective(baseline_area, followup_area, a: int, window: int = WINDOW) -> float:
    """Mean squared log ratio of ``g_B(x)`` and ``g_F(x - a)`` over the part
    of the first ``window`` samples where both are defined."""
    i = np.arange(window)
    j = i - a
    ok = (j >= 0) & (j < window)
    r = np.log(baseline_area[i[ok]]) - np.log(followup_area[j[ok]])
    return float(np.mean(r * r))


def align_pair(baseline: AreaSeries, followup: AreaSeries) -> AlignedPair:
    """Register ``followup`` onto ``baseline`` by an integer shift.

    The shift ``a`` in -5..5 minimises :func:`alignment_objective`; ties go
    to the smaller ``|a|`` and then to the negative shift.  ``a < 0`` drops
    the first ``|a|`` follow-up samples, ``a > 0`` the first ``a`` baseline
    samples; the longer result is then cut at the distal end.
    """
    need = WINDOW + MAX_SHIFT
    for name, s in (("baseline", baseline), ("followup", followup)):
        if not s.on_unit_grid:
            raise SeriesError(f"{name} is not on a 1 mm grid; resample first")
        if len(s) < need:
            raise SeriesError(f"{name} has {len(s)} samples; alignment needs at least {need}")

    shifts = list(range(-MAX_SHIFT, MAX_SHIFT + 1))
    obj = [alignment_objective(baseline.area, followup.area, a) for a in shifts]
    best = min(obj)
    tol = 1e-12 * max(best, 1e-300) + 1e-15
    a = min((s for s, v in zip(shifts, obj) if v <= best + tol), key=lambda s: (abs(s), s > 0))

    b_start, f_start = (a, 0) if a > 0 else (0, -a)
    n = min(len(baseline) - b_start, len(followup) - f_start)
    grid = np.arange(n, dtype=float)
    x0 = float(baseline.arc_length[b_start])
    b = AreaSeries(x0 + grid, baseline.area[b_start : b_start + n], dict(baseline.meta))
    f = AreaSeries(x0 + grid, followup.area[f_start : f_start + n], dict(followup.meta))
    return AlignedPair(b, f, a, n, x0, tuple(obj))


def log_difference(pair: AlignedPair) -> LogDiffSeries:
    """``log(followup) - log(baseline)`` sample by sample."""
    y = np.log(pair.followup.area) - np.log(pair.baseline.area)
    return LogDiffSeries(y, pair.x0)


def pair_to_record(pair: AlignedPair) -> dict:
    """JSON-ready alignment output, including the aligned areas so later
    steps (volumes) need no re-alignment."""
    ld = log_difference(pair)
    return {
        "shift_a": pair.shift_a,
        "n": pair.n,
        "x0": pair.x0,
        "y": ld.y.tolist(),
        "baseline_area": pair.baseline.area.tolist(),
        "followup_area": pair.followup.area.tolist(),
    }


def pair_from_record(rec: dict) -> AlignedPair:
    try:
        n = int(rec["n"])
        x0 = float(rec.get("x0", 0.0))
        b = np.asarray(rec["baseline_area"], dtype=float)
        f = np.asarray(rec["followup_area"], dtype=float)
        shift = int(rec.get("shift_a", 0))
    except (KeyError, TypeError, ValueError) as exc:
        raise SeriesError(f"malformed aligned record: {exc}") from None
    grid = x0 + np.arange(b.size, dtype=float)
    return AlignedPair(AreaSeries(grid, b), AreaSeries(grid, f), shift, n, x0)


def series_from_record(rec: dict) -> LogDiffSeries:
    try:
        y = np.asarray(rec["y"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise SeriesError(f"malformed series record: {exc}") from None
    if y.ndim != 1 or not np.all(np.isfinite(y)):
        raise SeriesError("y must be a flat list of finite numbers")
    if "n" in rec and int(rec["n"]) != y.size:
        raise SeriesError(f"n={rec['n']} but y has {y.size} values")
    return LogDiffSeries(y, float(rec.get("x0", 0.0)))


def load_record(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, exc.lineno, os.fspath(path)) from None
