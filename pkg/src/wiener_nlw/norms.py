"""Space-time Lebesgue norms of trajectories and interval bookkeeping.

Time integrals use the trapezoid rule on snapshot times.  When an interval
endpoint falls between snapshots, the integrand ``||u(t)||^q`` there is
interpolated linearly, so integrals are additive over arbitrary cuts.  Every
quadrature is a positive weighted sum, hence discrete Hoelder inequalities
hold exactly.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field as dc_field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import brentq

from .grid import GridSpec, InvalidParameter, Multiplier, batched_lebesgue

__all__ = [
    "NormSeries",
    "SpaceTimeNorm",
    "Admissibility",
    "IntervalPartition",
    "SmallnessReport",
    "EnsembleSmallness",
    "InsufficientSnapshots",
    "BudgetExceeded",
    "NORM_CSV_COLUMNS",
    "norm_series",
    "spacetime_norm",
    "admissible_pair_check",
    "subdivide_until_small",
    "smallness_condition",
    "write_norm_csv",
]

NORM_CSV_COLUMNS = ("sample_id", "q", "r", "a", "b", "value", "quad_error_est")


class InsufficientSnapshots(ValueError):
    pass


class BudgetExceeded(RuntimeError):
    def __init__(self, needed: int, budget: int):
        super().__init__(f"needs more than {budget} intervals (reached {needed})")
        self.needed = needed
        self.budget = budget


@dataclass
class NormSeries:
    """Spatial norms ``||u(t_i)||_{L^r}`` at the snapshot times of a trajectory."""

    times: np.ndarray
    values: np.ndarray
    r: float
    sample_id: int | str = 0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape or self.times.ndim != 1:
            raise InvalidParameter("times and values must be matching 1-D arrays")

    def at(self, t: float) -> float:
        return float(np.interp(t, self.times, self.values))

    def _nodes(self, a: float, b: float, stride: int = 1) -> tuple[np.ndarray, np.ndarray]:
        t = self.times
        tol = 1e-12 * max(1.0, abs(t[-1]))
        if a < t[0] - tol or b > t[-1] + tol or b < a:
            raise InvalidParameter(f"interval [{a}, {b}] outside [{t[0]}, {t[-1]}]")
        inside = np.flatnonzero((t > a + tol) & (t < b - tol))
        if stride > 1 and inside.size:
            inside = inside[::stride]
        ts = np.concatenate(([a], t[inside], [b]))
        vs = np.concatenate(([self.at(a)], self.values[inside], [self.at(b)]))
        return ts, vs

    def count_inside(self, a: float, b: float) -> int:
        tol = 1e-12 * max(1.0, abs(self.times[-1]))
        return int(np.count_nonzero((self.times >= a - tol) & (self.times <= b + tol)))

    def integral(self, q: float, a: float, b: float, stride: int = 1) -> float:
        """Trapezoid approximation of the integral of ``||u(t)||^q`` over [a, b].

        Endpoint values of ``||u||^q`` are interpolated linearly, so the rule is
        the exact integral of one piecewise-linear function and is additive
        over any partition of [a, b].
        """
        if b == a:
            return 0.0
        ts, vs = self._nodes(a, b, stride)
        w = vs ** q
        w[0] = np.interp(a, self.times, self.values ** q)
        w[-1] = np.interp(b, self.times, self.values ** q)
        return float(np.trapezoid(w, ts))

    def norm(self, q: float, a: float | None = None, b: float | None = None) -> float:
        a = self.times[0] if a is None else a
        b = self.times[-1] if b is None else b
        if q == np.inf:
            return float(self._nodes(a, b)[1].max())
        return self.integral(q, a, b) ** (1.0 / q)


@dataclass
class SpaceTimeNorm:
    q: float
    r: float
    interval: tuple[float, float]
    value: float
    quadrature: str
    quad_error_est: float = float("nan")
    sample_id: int | str = 0

    def csv_row(self) -> tuple:
        a, b = self.interval
        return (self.sample_id, _fmt(self.q), _fmt(self.r), _fmt(a), _fmt(b),
                _fmt(self.value), _fmt(self.quad_error_est))


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    x = float(x)
    if math.isinf(x):
        return "inf"
    return repr(x)


def write_norm_csv(path, norms: Iterable[SpaceTimeNorm], header_lines: Sequence[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(NORM_CSV_COLUMNS)
        for n in norms:
            w.writerow(n.csv_row())


def norm_series(traj, r: float, multiplier: Multiplier | None = None, sample_id=0,
                chunk: int = 64) -> NormSeries:
    """Spatial L^r norms of the position snapshots (after an optional multiplier)."""
    if isinstance(traj, NormSeries):
        return traj
    grid: GridSpec = traj.grid
    m = multiplier.values(grid) if multiplier is not None else None
    out = np.empty(len(traj.times))
    for s in range(0, len(out), chunk):
        c = traj.positions[s:s + chunk]
        if m is not None:
            c = c * m
        out[s:s + chunk] = batched_lebesgue(grid.to_physical(c), r, grid)
    return NormSeries(traj.times, out, r, sample_id)


def spacetime_norm(traj, q: float, r: float, interval: tuple[float, float] | None = None,
                   multiplier: Multiplier | None = None, sample_id=0) -> SpaceTimeNorm:
    """``||u||_{L^q_I L^r_x}`` of a Trajectory (or a precomputed NormSeries).

    Finite ``q`` uses the trapezoid rule, ``q = inf`` the maximum over
    snapshots.  The attached error estimate compares against the same rule
    on every other interior snapshot (a Richardson-style third of the gap).
    """
    series = norm_series(traj, r, multiplier, sample_id)
    if series.r != r:
        raise InvalidParameter(f"series holds L^{series.r} norms, asked for L^{r}")
    a, b = (series.times[0], series.times[-1]) if interval is None else map(float, interval)
    if series.count_inside(a, b) < 2:
        raise InsufficientSnapshots(f"fewer than 2 snapshots in [{a}, {b}]")
    if q == np.inf:
        return SpaceTimeNorm(q, r, (a, b), series.norm(q, a, b), "max-over-snapshots", 0.0, sample_id)
    if q < 1:
        raise InvalidParameter("q must lie in [1, inf]")
    fine = series.integral(q, a, b)
    coarse = series.integral(q, a, b, stride=2)
    value = fine ** (1.0 / q)
    err = abs(value - coarse ** (1.0 / q)) / 3.0
    return SpaceTimeNorm(q, r, (a, b), value, "trapezoid-over-snapshots", err, sample_id)


# ----------------------------------------------------------------------
# Admissibility
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class Admissibility:
    ok: bool
    reason: str
    gap_sum: float      # 1/2 - (1/q + 1/r), nonnegative when the first condition holds
    gap_scaling: float  # (3/2 - s) - (1/q + 3/r), zero on the scaling line

    def __bool__(self) -> bool:
        return self.ok


def admissible_pair_check(q: float, r: float, s: float, tol: float = 1e-12) -> Admissibility:
    """Whether (q, r) is s-wave admissible in three dimensions."""
    if q < 2:
        return Admissibility(False, f"q={q} < 2", float("nan"), float("nan"))
    if r == np.inf or r < 2:
        return Admissibility(False, f"r={r} outside [2, inf)", float("nan"), float("nan"))
    iq = 0.0 if q == np.inf else 1.0 / q
    g1 = 0.5 - (iq + 1.0 / r)
    g2 = (1.5 - s) - (iq + 3.0 / r)
    reasons = []
    if g1 < -tol:
        reasons.append(f"1/q + 1/r = {iq + 1 / r:.6g} > 1/2")
    if abs(g2) > tol:
        reasons.append(f"1/q + 3/r = {iq + 3 / r:.6g} != 3/2 - s = {1.5 - s:.6g}")
    if reasons:
        return Admissibility(False, "; ".join(reasons), g1, g2)
    return Admissibility(True, "admissible", g1, g2)


# ----------------------------------------------------------------------
# Interval partitions
# ----------------------------------------------------------------------
@dataclass
class IntervalPartition:
    parent: tuple[float, float]
    cuts: np.ndarray                 # a = c_0 < c_1 < ... < c_J = b
    values: np.ndarray               # per-interval norm
    flags: np.ndarray = dc_field(default_factory=lambda: np.zeros(0, bool))

    @property
    def intervals(self) -> list[tuple[float, float]]:
        return list(zip(self.cuts[:-1].tolist(), self.cuts[1:].tolist()))

    def __len__(self) -> int:
        return len(self.cuts) - 1


def subdivide_until_small(source, threshold: float, q: float = 5, r: float = 10,
                          max_intervals: int = 1000, factor: float = 4.0) -> IntervalPartition:
    """Greedy left-to-right cuts so that each piece has ``L^q L^r`` norm <= factor * threshold.

    Each cut is placed where the running norm reaches the bound exactly, so
    every interval but the last saturates it.
    """
    if not threshold > 0:
        raise InvalidParameter("threshold must be positive")
    if q == np.inf:
        raise InvalidParameter("subdivision needs finite q")
    series = norm_series(source, r)
    t0, t1 = float(series.times[0]), float(series.times[-1])
    budget = (factor * threshold) ** q
    cuts, values = [t0], []
    start = t0
    nodes = series.times
    while True:
        if series.integral(q, start, t1) <= budget:
            cuts.append(t1)
            values.append(series.integral(q, start, t1) ** (1 / q))
            break
        # first snapshot past which the running integral exceeds the budget
        later = nodes[nodes > start + 1e-14]
        hi = next(t for t in later if series.integral(q, start, t) > budget)
        prev = later[later < hi]
        lo = prev[-1] if prev.size else start
        if series.integral(q, start, lo) > budget:
            lo = start
        c = brentq(lambda x: series.integral(q, start, x) - budget, lo, hi, xtol=1e-14) if lo < hi else hi
        c = max(c, start + 1e-14)
        values.append(series.integral(q, start, c) ** (1 / q))
        cuts.append(c)
        start = c
        if len(values) > max_intervals:
            raise BudgetExceeded(len(values), max_intervals)
    if len(values) > max_intervals:
        raise BudgetExceeded(len(values), max_intervals)
    values = np.array(values)
    return IntervalPartition((t0, t1), np.array(cuts), values, values <= factor * threshold * (1 + 1e-9))


@dataclass
class SmallnessReport:
    partition: IntervalPartition
    bounds: np.ndarray
    passed: np.ndarray

    @property
    def all_passed(self) -> bool:
        return bool(np.all(self.passed))


@dataclass
class EnsembleSmallness:
    members: list[SmallnessReport]

    @property
    def fraction_passing(self) -> float:
        if not self.members:
            return float("nan")
        return float(np.mean([m.all_passed for m in self.members]))


def _smallness_one(series: NormSeries, K: float, theta: float, tau: float, q: float) -> SmallnessReport:
    t0, t1 = float(series.times[0]), float(series.times[-1])
    n = max(1, int(math.ceil((t1 - t0) / tau - 1e-9)))
    cuts = np.minimum(t0 + tau * np.arange(n + 1), t1)
    cuts[-1] = t1
    vals = np.array([series.norm(q, a, b) for a, b in zip(cuts[:-1], cuts[1:])])
    bounds = K * np.diff(cuts) ** theta
    passed = vals <= bounds
    return SmallnessReport(IntervalPartition((t0, t1), cuts, vals, passed), bounds, passed)


def smallness_condition(trajs, K: float, theta: float, tau_star: float, q: float = 5,
                        r: float = 10):
    """Check ``||u||_{L^q_{I_j} L^r} <= K |I_j|^theta`` on I_j = [j tau, (j+1) tau].

    A single trajectory (or NormSeries) gives a SmallnessReport; a sequence
    gives an EnsembleSmallness whose ``fraction_passing`` counts members
    satisfying the bound on every interval.
    """
    if not (tau_star > 0 and K > 0 and theta > 0):
        raise InvalidParameter("K, theta and tau_star must be positive")
    if isinstance(trajs, (list, tuple)):
        return EnsembleSmallness([_smallness_one(norm_series(t, r), K, theta, tau_star, q) for t in trajs])
    return _smallness_one(norm_series(trajs, r), K, theta, tau_star, q)
