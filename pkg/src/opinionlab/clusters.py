"""Cluster extraction and empirical observables from agent trajectories."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from .sde_sim import Trajectory

__all__ = [
    "DegenerateCluster",
    "NoOnset",
    "Cluster",
    "ClusterSet",
    "Track",
    "CenterSeries",
    "detect_clusters",
    "cluster_width",
    "track_centers",
    "quadratic_variation",
    "width_series",
    "onset_time_empirical",
    "group_counts",
    "longest_hold",
]


class DegenerateCluster(ValueError):
    """Width requested for fewer than two members."""


class NoOnset(RuntimeError):
    """The mean cluster width never contracts, so no onset can be read off."""


@dataclass
class Cluster:
    member_ids: np.ndarray
    center: float
    mass_count: int
    width: float  # nan for singletons


@dataclass
class ClusterSet:
    time: float
    clusters: list
    gap: float

    def __len__(self):
        return len(self.clusters)

    def count(self, min_members: int = 1) -> int:
        return sum(c.mass_count >= min_members for c in self.clusters)

    @property
    def centers(self) -> np.ndarray:
        return np.array([c.center for c in self.clusters])

    @property
    def masses(self) -> np.ndarray:
        return np.array([c.mass_count for c in self.clusters])

    def mean_width(self, min_members: int = 2, weighted: bool = False) -> float:
        """Average width over clusters with enough members, optionally by member count."""
        sel = [c for c in self.clusters if c.mass_count >= max(min_members, 2)]
        if not sel:
            return float("nan")
        w = np.array([c.width for c in sel])
        m = np.array([c.mass_count for c in sel], dtype=float) if weighted else np.ones(len(sel))
        return float(np.sum(m * w) / np.sum(m))


def cluster_width(members) -> float:
    """sqrt(2/(n-1) sum (x - mean)^2); tends to w for a density ~ exp(-(x-X)^2/w^2)."""
    x = np.asarray(members, dtype=float)
    n = x.size
    if n < 2:
        raise DegenerateCluster(f"width needs at least two members, got {n}")
    return float(np.sqrt(2.0 * np.sum((x - x.mean()) ** 2) / (n - 1)))


def detect_clusters(positions, gap: float, time: float = 0.0, period: Optional[float] = None) -> ClusterSet:
    """Split sorted positions wherever consecutive agents are more than ``gap`` apart.

    With ``period`` the positions live on a circle of that length: the
    largest circular gap is cut first and centers are reported modulo the
    period.
    """
    if not gap > 0:
        raise ValueError("gap must be positive")
    x = np.asarray(positions, dtype=float)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    if period is not None and xs.size > 1:
        wrap = xs[0] + period - xs[-1]
        gaps = np.diff(xs)
        k = int(np.argmax(gaps)) if gaps.size else 0
        if gaps.size and gaps[k] > wrap:
            # rotate so the widest gap becomes the seam
            order = np.roll(order, -(k + 1))
            xs = x[order].copy()
            xs[xs.size - k - 1:] += period
    cuts = np.flatnonzero(np.diff(xs) > gap) + 1
    clusters = []
    for ids, vals in zip(np.split(order, cuts), np.split(xs, cuts)):
        center = float(vals.mean())
        if period is not None:
            center = center % period
        width = cluster_width(vals) if vals.size >= 2 else float("nan")
        clusters.append(Cluster(member_ids=ids, center=center, mass_count=int(vals.size), width=width))
    clusters.sort(key=lambda c: c.center)
    return ClusterSet(time=float(time), clusters=clusters, gap=float(gap))


@dataclass
class Track:
    label: int
    times: list = field(default_factory=list)
    centers: list = field(default_factory=list)
    masses: list = field(default_factory=list)
    widths: list = field(default_factory=list)
    ended_by: Optional[str] = None  # "merge", "lost" or None (alive at the end)

    def arrays(self):
        return np.asarray(self.times), np.asarray(self.centers), np.asarray(self.masses)


@dataclass
class CenterSeries:
    tracks: dict
    merges: list  # (time, absorbed, survivor)
    gap: float

    def alive_at(self, t: float) -> list:
        return [tr for tr in self.tracks.values() if tr.times and tr.times[0] <= t <= tr.times[-1]]


def _circ_dist(a, b, period):
    d = abs(a - b)
    if period is not None:
        d = min(d, period - d)
    return d


def track_centers(
    trajectory: Trajectory,
    gap: Optional[float] = None,
    t_start: float = 0.0,
    min_members: int = 1,
) -> CenterSeries:
    """Follow cluster centers across snapshots.

    Every live track moves to the nearest cluster of the next snapshot if it
    lies within R0.  Tracks landing on the same cluster merge; the one with
    the larger previous mass keeps its label (ties: smaller label).
    Clusters nobody claims start new tracks.
    """
    cfg = trajectory.config
    gap = cfg.radius / 2.0 if gap is None else gap
    period = cfg.length if cfg.boundary == "periodic" else None
    tracks: dict[int, Track] = {}
    merges = []
    live: dict[int, int] = {}  # label -> index of its cluster in the previous snapshot
    prev = None
    next_label = 0
    for t, x in zip(trajectory.times, trajectory.positions):
        if t < t_start - 1e-9:
            continue
        cs = detect_clusters(x, gap, t, period)
        clusters = [c for c in cs.clusters if c.mass_count >= min_members]
        claimed: dict[int, list] = {}
        if prev is not None:
            for label, idx in live.items():
                c_prev = prev[idx]
                if not clusters:
                    continue
                dists = [_circ_dist(c_prev.center, c.center, period) for c in clusters]
                j = int(np.argmin(dists))
                if dists[j] <= cfg.radius:
                    claimed.setdefault(j, []).append(label)
                else:
                    tracks[label].ended_by = "lost"
        new_live = {}
        for j, c in enumerate(clusters):
            labels = claimed.get(j)
            if not labels:
                label = next_label
                next_label += 1
                tracks[label] = Track(label)
            else:
                label = min(labels, key=lambda lb: (-tracks[lb].masses[-1], lb))
                for other in sorted(labels):
                    if other != label:
                        merges.append((float(t), other, label))
                        tracks[other].ended_by = "merge"
            tracks[label].times.append(float(t))
            tracks[label].centers.append(c.center)
            tracks[label].masses.append(c.mass_count)
            tracks[label].widths.append(c.width)
            new_live[label] = j
        live = new_live
        prev = clusters
    return CenterSeries(tracks=tracks, merges=merges, gap=gap)


def quadratic_variation(series, t0: float, t1: float, period: Optional[float] = None) -> float:
    """Sum of squared center increments between snapshots in [t0, t1].

    ``series`` is a :class:`Track` or a ``(times, values)`` pair.
    """
    if isinstance(series, Track):
        times, values = np.asarray(series.times), np.asarray(series.centers)
    else:
        times, values = (np.asarray(a, dtype=float) for a in series)
    eps = 1e-9
    mask = (times >= t0 - eps) & (times <= t1 + eps)
    if mask.sum() < 2 and t1 > t0:
        raise ValueError(f"series does not cover [{t0}, {t1}]")
    inc = np.diff(values[mask])
    if period is not None:
        inc = (inc + period / 2.0) % period - period / 2.0
    return float(np.sum(inc**2))


def width_series(
    trajectory: Trajectory, gap: Optional[float] = None, min_members: int = 2, weighted: bool = False
) -> np.ndarray:
    """Mean width of clusters with at least ``min_members`` agents, per snapshot."""
    cfg = trajectory.config
    gap = cfg.radius / 2.0 if gap is None else gap
    period = cfg.length if cfg.boundary == "periodic" else None
    return np.array([
        detect_clusters(x, gap, t, period).mean_width(min_members, weighted)
        for t, x in zip(trajectory.times, trajectory.positions)
    ])


def onset_time_empirical(
    trajectory: Trajectory,
    gap: Optional[float] = None,
    min_members: int = 2,
    min_contraction: float = 0.5,
) -> float:
    """First snapshot time where the mean width drops below (max + min) / 2.

    The mean is weighted by member count, so a few agents splitting off at
    the edge of the domain do not count as the population clustering.
    Raises NoOnset when the width never contracts to ``min_contraction`` of
    its maximum: a fluctuating width in a noise-dominated run would
    otherwise cross its own midpoint.
    """
    w = width_series(trajectory, gap, min_members, weighted=True)
    ok = np.isfinite(w)
    if not ok.any():
        raise NoOnset("no cluster with enough members in any snapshot")
    hi, lo = np.max(w[ok]), np.min(w[ok])
    if lo > min_contraction * hi:
        raise NoOnset(f"mean width only contracts from {hi:.3g} to {lo:.3g}")
    mid = 0.5 * (hi + lo)
    first_max = int(np.argmax(np.where(ok, w, -np.inf)))
    below = np.flatnonzero(ok & (w < mid) & (np.arange(w.size) >= first_max))
    return float(trajectory.times[below[0]])


@njit(cache=True)
def _group_counts(snaps, gap, min_members, max_width):
    out = np.zeros(snaps.shape[0], dtype=np.int64)
    for r in range(snaps.shape[0]):
        xs = np.sort(snaps[r])
        n = xs.size
        start = 0
        for i in range(1, n + 1):
            if i == n or xs[i] - xs[i - 1] > gap:
                m = i - start
                if m >= min_members and m >= 2:
                    mean = 0.0
                    for j in range(start, i):
                        mean += xs[j]
                    mean /= m
                    ss = 0.0
                    for j in range(start, i):
                        ss += (xs[j] - mean) ** 2
                    if math.sqrt(2.0 * ss / (m - 1)) <= max_width:
                        out[r] += 1
                elif m >= min_members:
                    out[r] += 1
                start = i
    return out


def group_counts(
    trajectory: Trajectory,
    gap: Optional[float] = None,
    min_members: int = 1,
    max_width: float = math.inf,
) -> np.ndarray:
    """Per snapshot, the number of gap-separated groups with at least
    ``min_members`` agents and width at most ``max_width``.

    Same grouping as :func:`detect_clusters` on an interval; periodic
    trajectories fall back to it.
    """
    cfg = trajectory.config
    gap = cfg.radius / 2.0 if gap is None else gap
    if cfg.boundary == "periodic":
        out = []
        for t, x in zip(trajectory.times, trajectory.positions):
            cs = detect_clusters(x, gap, t, cfg.length)
            out.append(sum(
                c.mass_count >= min_members and (c.mass_count < 2 or c.width <= max_width)
                for c in cs.clusters
            ))
        return np.array(out, dtype=np.int64)
    snaps = np.ascontiguousarray(trajectory.positions, dtype=float)
    return _group_counts(snaps, float(gap), int(min_members), float(max_width))


def longest_hold(times, flags) -> float:
    """Longest time span t_last - t_first over runs of consecutive true flags
    (-inf if no flag is set)."""
    times = np.asarray(times, dtype=float)
    flags = np.asarray(flags, dtype=bool)
    best = -math.inf
    start = None
    for i, f in enumerate(flags):
        if f:
            if start is None:
                start = i
            best = max(best, times[i] - times[start])
        else:
            start = None
    return best
