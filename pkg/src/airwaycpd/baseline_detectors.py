"""Two conventional dilatation detectors used as comparators.

``threshold_detect`` smooths with a 5 mm moving mean and walks in from the
distal end until the signal rises above its upper quartile.
``penalized_cost_detect`` places exactly two changepoints by exhaustive
least-squares search with a 20 mm minimum spacing and reports the distal one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

THRESHOLD_WINDOW = 5
PAIR_COUNT = 2
MIN_DISTANCE = 20


class NoCallError(RuntimeError):
    """A detector found nothing to report."""


@dataclass
class BaselineCall:
    method: str
    point_mm: float
    aux: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"method": self.method, "point_mm": self.point_mm, **self.aux}


def moving_mean(y, window: int = THRESHOLD_WINDOW) -> np.ndarray:
    """Centred moving mean; near the ends only the available samples count."""
    y = np.asarray(y, dtype=float)
    k = np.ones(window)
    return np.convolve(y, k, mode="same") / np.convolve(np.ones_like(y), k, mode="same")


def threshold_detect(y) -> BaselineCall:
    """First index, scanning from the distal end, where the smoothed signal
    exceeds its upper quartile.

    ``aux`` carries the quartile, the exceedance mask and ``run_start``, the
    proximal edge of the exceedance run containing the returned point.

    Raises
    ------
    NoCallError
        If nothing exceeds the quartile (constant input).
    """
    y = np.asarray(y, dtype=float)
    if y.size < THRESHOLD_WINDOW:
        raise ValueError(f"need at least {THRESHOLD_WINDOW} samples, got {y.size}")
    smooth = moving_mean(y)
    q3 = float(np.quantile(smooth, 0.75))  # numpy default is the type-7 rule
    # rounding in the moving mean must not make a constant signal exceed itself
    tol = 1e-12 * max(float(np.max(np.abs(smooth))), 1.0)
    above = smooth > q3 + tol
    hits = np.flatnonzero(above)
    if hits.size == 0:
        raise NoCallError("no sample exceeds the upper quartile")
    point = int(hits[-1])
    start = point
    while start > 0 and above[start - 1]:
        start -= 1
    return BaselineCall(
        "threshold",
        float(point),
        {"q3": q3, "run_start": start, "exceeds": above.astype(int).tolist()},
    )


def _segment_cost(cs, cs2, lo, hi):
    """Sum of squared deviations from the mean of y[lo:hi] via prefix sums.
    Broadcasts over array-valued bounds."""
    s = cs[hi] - cs[lo]
    return (cs2[hi] - cs2[lo]) - s * s / (hi - lo)


def _prefix_sums(y):
    # centring keeps the prefix-sum variance formula accurate
    yc = y - y.mean()
    return np.concatenate([[0.0], np.cumsum(yc)]), np.concatenate([[0.0], np.cumsum(yc * yc)])


def pair_costs(y, min_dist: int = MIN_DISTANCE) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Costs of every admissible changepoint pair.

    Returns ``(k1, k2, cost)`` flattened in lexicographic (k1, k2) order.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    if n < 3 * min_dist:
        raise ValueError(f"need at least {3 * min_dist} samples for two changepoints, got {n}")
    cs, cs2 = _prefix_sums(y)
    k = np.arange(min_dist, n - 2 * min_dist + 1)
    k1, k2 = np.meshgrid(k, np.arange(2 * min_dist, n - min_dist + 1), indexing="ij")
    ok = k2 - k1 >= min_dist
    k1, k2 = k1[ok], k2[ok]
    cost = (
        _segment_cost(cs, cs2, 0, k1)
        + _segment_cost(cs, cs2, k1, k2)
        + _segment_cost(cs, cs2, k2, n)
    )
    return k1, k2, cost


def penalized_cost_detect(y, min_dist: int = MIN_DISTANCE,
                          rtol: float = 1e-12) -> BaselineCall:
    """Least-squares split into three segments; returns the distal changepoint.

    Changepoints are first indices of new segments.  Every segment, including
    the two end ones, is at least ``min_dist`` samples long.  Costs within
    ``rtol`` (relative to the total sum of squares) of the minimum count as
    tied and the lexicographically smallest pair wins.

    ``aux["beta"]`` is the largest penalty per changepoint at which the
    two-changepoint fit still beats the best single-changepoint fit.  With K
    fixed at 2 it is reported only.
    """
    y = np.asarray(y, dtype=float)
    k1, k2, cost = pair_costs(y, min_dist)
    scale = float(np.sum((y - y.mean()) ** 2))
    best = cost.min()
    tied = np.flatnonzero(cost <= best + rtol * max(scale, 1.0))
    i = tied[0]  # arrays are in lexicographic order already
    pair = (int(k1[i]), int(k2[i]))

    n = y.size
    cs, cs2 = _prefix_sums(y)
    k = np.arange(min_dist, n - min_dist + 1)
    single = float(np.min(_segment_cost(cs, cs2, 0, k) + _segment_cost(cs, cs2, k, n)))
    beta = max(single - float(best), 0.0)
    return BaselineCall(
        "penalized_cost",
        float(pair[1]),
        {"changepoints": list(pair), "cost": float(best), "beta": beta},
    )
