"""Markovian coarsening of formed clusters.

After onset each cluster is a point mass: its center performs Brownian
motion with variance sigma^2 dt / (N m) per step, and two clusters merge
the moment their centers come within R0.  A merge conserves mass and the
mass-weighted center; the width follows sigma / sqrt(m phi_0(0)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from numba import njit

from .influence import ScaledInfluence
from .rng import PURPOSE_REDUCED, fill_normals
from .stability import NotUnstable, StabilityReport

__all__ = [
    "ReducedParams",
    "ReducedCluster",
    "ReducedState",
    "MergeEvent",
    "MergeLog",
    "init_from_report",
    "step_centers",
    "detect_collision",
    "merge",
    "run_to_consensus",
    "default_reduced_dt",
    "two_cluster_collision_time",
    "merge_relaxation",
]

_BOUNDARY_CODE = {"free": 0, "reflecting": 1, "periodic": 2}


@dataclass(frozen=True)
class ReducedParams:
    sigma: float
    n_agents: int
    radius: float = 1.0
    phi0: float = 1.0
    length: float = 10.0
    boundary: str = "periodic"

    def width(self, mass: float) -> float:
        return self.sigma / math.sqrt(mass * self.phi0)


@dataclass(frozen=True)
class ReducedCluster:
    center: float
    mass: float
    width: float

    def __post_init__(self):
        # summed fractions may overshoot 1 by rounding
        if not 0.0 < self.mass <= 1.0 + 1e-9:
            raise ValueError(f"cluster mass must lie in (0, 1], got {self.mass}")


@dataclass
class ReducedState:
    time: float
    clusters: list
    params: ReducedParams
    step: int = 0

    def __len__(self):
        return len(self.clusters)

    @property
    def centers(self) -> np.ndarray:
        return np.array([c.center for c in self.clusters])

    @property
    def masses(self) -> np.ndarray:
        return np.array([c.mass for c in self.clusters])

    @property
    def total_mass(self) -> float:
        return float(sum(c.mass for c in self.clusters))


@dataclass(frozen=True)
class MergeEvent:
    tau: float
    merged_a: int
    merged_b: int
    new_center: float
    new_mass: float
    new_width: float


@dataclass
class MergeLog:
    events: list = field(default_factory=list)
    status: str = "running"  # "consensus" or "t_max"
    final: Optional[ReducedState] = None
    mass_after: list = field(default_factory=list)
    paths: Optional[tuple] = None  # (times, centers padded with nan)


def _sorted(clusters, params):
    return sorted(clusters, key=lambda c: c.center)


def _distance(a, b, params):
    d = abs(a - b)
    if params.boundary == "periodic":
        d = min(d, params.length - d)
    return d


def init_from_report(report: StabilityReport, params: ReducedParams) -> ReducedState:
    """Equally spaced clusters of mass m_c at j * 2 pi / k_max."""
    if not report.unstable:
        raise NotUnstable("reduced model starts from an unstable report")
    n = int(round(report.length * report.k_max / (2.0 * math.pi)))
    spacing = 2.0 * math.pi / report.k_max
    clusters = [ReducedCluster(j * spacing, report.m_c, params.width(report.m_c)) for j in range(n)]
    return ReducedState(0.0, clusters, params)


def _fold(x, params):
    if params.boundary == "periodic":
        # same arithmetic as the compiled stepper
        x = x - params.length * math.floor(x / params.length)
        return 0.0 if x >= params.length else x
    if params.boundary == "reflecting":
        L = params.length
        while x < 0.0 or x > L:
            x = -x if x < 0.0 else 2.0 * L - x
    return x


def step_centers(state: ReducedState, dt: float, seed: int = 0) -> ReducedState:
    """Independent Gaussian increments, variance sigma^2 dt / (N m), per cluster.

    The draws for step ``state.step`` are keyed by ``(seed, step, index)``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    p = state.params
    z = np.empty(len(state.clusters))
    fill_normals(z, np.uint64(seed), np.uint64(state.step), np.uint64(PURPOSE_REDUCED))
    moved = []
    for c, zi in zip(state.clusters, z):
        x = c.center + p.sigma * math.sqrt(dt / (p.n_agents * c.mass)) * zi
        moved.append(replace(c, center=_fold(x, p)))
    return ReducedState(state.time + dt, _sorted(moved, p), p, state.step + 1)


def detect_collision(state: ReducedState) -> Optional[tuple]:
    """Closest pair of centers if within R0 (ties: smallest indices)."""
    best = None
    cs = state.clusters
    for k in range(len(cs)):
        for l in range(k + 1, len(cs)):
            d = _distance(cs[k].center, cs[l].center, state.params)
            if best is None or d < best[0]:
                best = (d, k, l)
    if best is not None and best[0] <= state.params.radius:
        return best[1], best[2]
    return None


def merge(state: ReducedState, k: int, l: int) -> ReducedState:
    """Replace clusters k and l by their mass-weighted union."""
    return _merge_pair(state, k, l)[0]


def _merge_pair(state, k, l):
    if k == l:
        raise ValueError("cannot merge a cluster with itself")
    p = state.params
    a, b = state.clusters[k], state.clusters[l]
    xb = b.center
    if p.boundary == "periodic":
        # minimal image of b relative to a
        xb = a.center + ((b.center - a.center + p.length / 2.0) % p.length - p.length / 2.0)
    mass = a.mass + b.mass
    center = (a.mass * a.center + b.mass * xb) / mass
    if p.boundary == "periodic":
        center %= p.length
    new = ReducedCluster(center, mass, p.width(mass))
    rest = [c for i, c in enumerate(state.clusters) if i not in (k, l)]
    return ReducedState(state.time, _sorted(rest + [new], p), p, state.step), new


def default_reduced_dt(params: ReducedParams, min_mass: float, dt_particle: float = 0.1) -> float:
    """N dt / 10, shrunk until one step moves a center less than R0 / 10 (one sd)."""
    dt = params.n_agents * dt_particle * 0.1
    if params.sigma > 0:
        limit = (params.radius / 10.0) ** 2 * params.n_agents * min_mass / params.sigma**2
        dt = min(dt, 0.5 * limit)
    return dt


def two_cluster_collision_time(distance: float, masses: tuple, params: ReducedParams) -> float:
    """Mean first time two clusters on the torus reach center distance R0.

    Their separation is a Brownian motion with variance rate
    sigma^2 (1/m1 + 1/m2) / N, exiting (R0, L - R0); from d the mean exit
    time is (d - R0)(L - R0 - d) / rate.
    """
    rate = params.sigma**2 * (1.0 / masses[0] + 1.0 / masses[1]) / params.n_agents
    return (distance - params.radius) * (params.length - params.radius - distance) / rate


@njit(cache=True)
def _advance(centers, amps, ids, radius, length, code, seed, step0, max_steps):
    """Step centers until some pair is within R0; returns steps taken.

    After every step the arrays are re-sorted by center (as in
    :func:`step_centers`), so draw i always goes to the i-th cluster from
    the left and the path does not depend on how steps are chunked.
    """
    m = centers.shape[0]
    z = np.empty(m)
    for s in range(max_steps):
        fill_normals(z, seed, step0 + s, 2)
        for i in range(m):
            x = centers[i] + amps[i] * z[i]
            if code == 2:
                x = x - length * math.floor(x / length)
                if x >= length:
                    x = 0.0
            elif code == 1:
                while x < 0.0 or x > length:
                    x = -x if x < 0.0 else 2.0 * length - x
            centers[i] = x
        for i in range(1, m):
            j = i
            while j > 0 and centers[j - 1] > centers[j]:
                centers[j - 1], centers[j] = centers[j], centers[j - 1]
                amps[j - 1], amps[j] = amps[j], amps[j - 1]
                ids[j - 1], ids[j] = ids[j], ids[j - 1]
                j -= 1
        for i in range(m):
            for j in range(i + 1, m):
                d = abs(centers[i] - centers[j])
                if code == 2:
                    d = min(d, length - d)
                if d <= radius:
                    return s + 1
    return max_steps


def run_to_consensus(
    state: ReducedState,
    dt: Optional[float] = None,
    seed: int = 0,
    t_max: float = math.inf,
    record_every: int = 0,
) -> MergeLog:
    """Alternate Brownian steps and merges until one cluster is left or t_max.

    Collisions are resolved (possibly several at one time stamp) before
    every step.  ``record_every > 0`` stores center paths at that stride.
    """
    p = state.params
    if dt is None:
        dt = default_reduced_dt(p, min(c.mass for c in state.clusters) if state.clusters else 1.0)
    if not dt > 0:
        raise ValueError("dt must be positive")
    log = MergeLog()
    code = _BOUNDARY_CODE[p.boundary]
    path_t, path_x = [], []
    chunk = record_every if record_every > 0 else 1 << 20

    while True:
        pair = detect_collision(state)
        while pair is not None:
            k, l = pair
            state, new = _merge_pair(state, k, l)
            log.events.append(MergeEvent(state.time, k, l, new.center, new.mass, new.width))
            log.mass_after.append(state.total_mass)
            pair = detect_collision(state)
        if record_every > 0:
            path_t.append(state.time)
            path_x.append(state.centers)
        if len(state.clusters) <= 1:
            log.status = "consensus"
            break
        if state.time >= t_max:
            log.status = "t_max"
            break
        remaining = int(math.ceil((t_max - state.time) / dt - 1e-9)) if math.isfinite(t_max) else chunk
        n = max(1, min(chunk, remaining))
        centers = state.centers.copy()
        amps = p.sigma * np.sqrt(dt / (p.n_agents * state.masses))
        ids = np.arange(len(state.clusters))
        taken = _advance(centers, amps, ids, p.radius, p.length, code,
                         np.uint64(seed), np.int64(state.step), n)
        clusters = [replace(state.clusters[i], center=float(x)) for i, x in zip(ids, centers)]
        state = ReducedState(state.time + taken * dt, clusters, p, state.step + taken)
    log.final = state
    if record_every > 0:
        width = max(len(x) for x in path_x)
        padded = np.full((len(path_x), width), np.nan)
        for i, x in enumerate(path_x):
            padded[i, : len(x)] = x
        log.paths = (np.array(path_t), padded)
    return log


def merge_relaxation(xk: float, xl: float, m_c: float, influence: ScaledInfluence, dt: float = 1e-3, t_end: float = 4.0):
    """Euler solution of the two-center collapse ODE.

    dX_k/dt = -m_c (X_k - X_l) phi(X_k - X_l) and symmetrically for X_l.
    Returns ``(times, distance, midpoint)``.
    """
    if abs(xk - xl) > influence.radius:
        raise ValueError("centers must start within the interaction radius")
    n = int(round(t_end / dt))
    times = np.arange(n + 1) * dt
    dist = np.empty(n + 1)
    mid = np.empty(n + 1)
    a, b = float(xk), float(xl)
    for i in range(n + 1):
        dist[i] = abs(a - b)
        mid[i] = 0.5 * (a + b)
        f = m_c * (a - b) * influence(a - b)
        a, b = a - dt * f, b + dt * f
    return times, dist, mid
