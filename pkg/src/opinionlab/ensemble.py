"""Independent realizations, aggregated observables and mode-variance checks."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .clusters import NoOnset, detect_clusters, onset_time_empirical
from .rng import derive_seed
from .sde_sim import SimConfig, run
from .stability import DomainParams, StabilityReport, growth_rate, predicted_mode_variance

__all__ = [
    "OBSERVABLES",
    "ZeroMode",
    "OnsetExceeded",
    "RealizationError",
    "EnsembleConfig",
    "RealizationResult",
    "EnsembleStats",
    "ModeComparison",
    "empirical_mode",
    "run_realization",
    "run_ensemble",
    "mode_variance_check",
]

OBSERVABLES = ("widths", "counts", "onset", "modes")


class ZeroMode(ValueError):
    """The k = 0 mode is identically zero in the fluctuation theory."""


class OnsetExceeded(ValueError):
    """Mode check requested after clustering has begun."""


class RealizationError(RuntimeError):
    def __init__(self, index: int, cause: BaseException):
        super().__init__(f"realization {index} failed: {cause!r}")
        self.index = index
        self.cause = cause


@dataclass(frozen=True)
class EnsembleConfig:
    """``stat_times`` defaults to every snapshot; ``min_members`` filters
    clusters entering widths and counts, so stray agents between clusters
    are not counted as clusters."""

    base: SimConfig = field(default_factory=SimConfig)
    n_realizations: int = 100
    observables: frozenset = frozenset({"widths", "counts"})
    mode_wavenumbers: tuple = ()
    stat_times: Optional[tuple] = None
    gap: Optional[float] = None
    min_members: int = 10
    workers: int = 1

    def __post_init__(self):
        if self.n_realizations < 1:
            raise ValueError("n_realizations must be positive")
        object.__setattr__(self, "observables", frozenset(self.observables))
        unknown = self.observables - set(OBSERVABLES)
        if unknown:
            raise ValueError(f"unknown observables {sorted(unknown)}")
        object.__setattr__(self, "mode_wavenumbers", tuple(float(k) for k in self.mode_wavenumbers))
        if "modes" in self.observables and not self.mode_wavenumbers:
            raise ValueError("mode observable needs mode_wavenumbers")
        for k in self.mode_wavenumbers:
            _check_grid(k, self.base.length)
        if self.stat_times is not None:
            object.__setattr__(self, "stat_times", tuple(float(t) for t in self.stat_times))

    def realization_config(self, index: int) -> SimConfig:
        return self.base.with_(seed=derive_seed(self.base.seed, index))

    @property
    def cluster_gap(self) -> float:
        return self.base.radius / 2.0 if self.gap is None else self.gap


def _check_grid(k: float, length: float):
    if k == 0:
        raise ZeroMode("k = 0")
    n = k * length / (2.0 * math.pi)
    if abs(n - round(n)) > 1e-6:
        raise ValueError(f"k = {k} is not on the frequency grid 2 pi n / {length}")


def empirical_mode(positions, k: float, length: float) -> complex:
    """N^{-1/2} sum_j exp(-i k x_j) for a grid wavenumber k != 0."""
    _check_grid(k, length)
    x = np.asarray(positions, dtype=float)
    a = abs(k) * x
    # evaluate at |k| so that mode(-k) is the exact conjugate of mode(k)
    re = float(np.sum(np.cos(a)))
    im = -float(np.sum(np.sin(a)))
    if k < 0:
        im = -im
    return complex(re, im) / math.sqrt(x.size)


@dataclass
class RealizationResult:
    index: int
    seed: int
    widths: np.ndarray
    counts: np.ndarray
    onset: float  # nan when the width never contracts
    modes: np.ndarray  # |mode|^2, shape (n_k, n_t)


def _snapshot_indices(times: np.ndarray, wanted: Sequence[float]) -> np.ndarray:
    idx = np.searchsorted(times, np.asarray(wanted) - 1e-9)
    idx = np.minimum(idx, times.size - 1)
    bad = np.abs(times[idx] - np.asarray(wanted)) > 1e-9
    if bad.any():
        raise ValueError(f"stat times {np.asarray(wanted)[bad]} are not snapshot times")
    return idx


def run_realization(config: EnsembleConfig, index: int) -> RealizationResult:
    """One member of the ensemble; reproducible in isolation from (base seed, index)."""
    cfg = config.realization_config(index)
    traj = run(cfg)
    times = traj.times if config.stat_times is None else np.asarray(config.stat_times)
    idx = _snapshot_indices(traj.times, times)
    period = cfg.length if cfg.boundary == "periodic" else None
    obs = config.observables
    n_t = idx.size
    widths = np.full(n_t, np.nan)
    counts = np.full(n_t, np.nan)
    if obs & {"widths", "counts"}:
        for s, i in enumerate(idx):
            cs = detect_clusters(traj.positions[i], config.cluster_gap, traj.times[i], period)
            widths[s] = cs.mean_width(config.min_members)
            counts[s] = cs.count(config.min_members)
    onset = math.nan
    if "onset" in obs:
        try:
            onset = onset_time_empirical(traj, config.cluster_gap)
        except NoOnset:
            pass
    modes = np.full((len(config.mode_wavenumbers), n_t), np.nan)
    if "modes" in obs:
        for a, k in enumerate(config.mode_wavenumbers):
            for s, i in enumerate(idx):
                modes[a, s] = abs(empirical_mode(traj.positions[i], k, cfg.length)) ** 2
    return RealizationResult(index, cfg.seed, widths, counts, onset, modes)


def _guarded(args):
    config, index = args
    try:
        return run_realization(config, index)
    except Exception as exc:  # noqa: BLE001 - re-raised with the index attached
        raise RealizationError(index, exc) from exc


@dataclass
class EnsembleStats:
    """Per-time means and standard errors over realizations.

    Standard errors are ``None`` for a single realization.  The raw
    per-realization arrays are kept, ordered by realization index.
    """

    config: EnsembleConfig
    times: np.ndarray
    widths: np.ndarray  # (n_r, n_t)
    counts: np.ndarray  # (n_r, n_t)
    onsets: np.ndarray  # (n_r,)
    modes: np.ndarray  # (n_r, n_k, n_t)

    @property
    def n_realizations(self) -> int:
        return self.widths.shape[0]

    def _mean_se(self, a):
        with np.errstate(all="ignore"):
            mean = np.nanmean(a, axis=0) if np.isfinite(a).any() else np.full(a.shape[1:], np.nan)
            if a.shape[0] < 2:
                return mean, None
            n = np.sum(np.isfinite(a), axis=0)
            se = np.nanstd(a, axis=0, ddof=1) / np.sqrt(n)
        return mean, se

    @property
    def width_mean(self):
        return self._mean_se(self.widths)[0]

    @property
    def width_se(self):
        return self._mean_se(self.widths)[1]

    @property
    def count_mean(self):
        return self._mean_se(self.counts)[0]

    @property
    def count_se(self):
        return self._mean_se(self.counts)[1]

    @property
    def mode_mean(self):
        return self._mean_se(self.modes)[0]

    @property
    def mode_se(self):
        return self._mean_se(self.modes)[1]

    def time_index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9:
            raise ValueError(f"t = {t} is not a stat time")
        return i

    def count_distribution(self, t: float) -> dict:
        vals, freq = np.unique(self.counts[:, self.time_index(t)], return_counts=True)
        return {int(v): int(f) for v, f in zip(vals, freq)}

    def modal_count(self, t: float) -> tuple:
        """(most frequent count, fraction of realizations with it)."""
        dist = self.count_distribution(t)
        best = max(dist, key=lambda c: (dist[c], -c))
        return best, dist[best] / self.n_realizations

    def long_rows(self):
        """Rows ``(time, observable, mean, stderr)``; stderr is nan if absent."""
        rows = []
        for name, a in (("width", self.widths), ("count", self.counts)):
            if not np.isfinite(a).any():
                continue
            mean, se = self._mean_se(a)
            for s, t in enumerate(self.times):
                rows.append((float(t), name, float(mean[s]), float(se[s]) if se is not None else math.nan))
        for a, k in enumerate(self.config.mode_wavenumbers):
            mean, se = self._mean_se(self.modes[:, a, :])
            for s, t in enumerate(self.times):
                rows.append((float(t), f"mode_k={k:.6g}", float(mean[s]), float(se[s]) if se is not None else math.nan))
        return rows

    def to_dict(self) -> dict:
        def clean(a):
            return None if a is None else np.where(np.isfinite(a), a, None).tolist()

        return {
            "n_realizations": self.n_realizations,
            "times": self.times.tolist(),
            "width_mean": clean(self.width_mean),
            "width_stderr": clean(self.width_se),
            "count_mean": clean(self.count_mean),
            "count_stderr": clean(self.count_se),
            "onset_times": clean(self.onsets),
            "mode_wavenumbers": list(self.config.mode_wavenumbers),
            "mode_mean": clean(self.mode_mean),
            "mode_stderr": clean(self.mode_se),
        }


def aggregate(config: EnsembleConfig, results: Sequence[RealizationResult], times) -> EnsembleStats:
    results = sorted(results, key=lambda r: r.index)
    return EnsembleStats(
        config=config,
        times=np.asarray(times, dtype=float),
        widths=np.array([r.widths for r in results]),
        counts=np.array([r.counts for r in results]),
        onsets=np.array([r.onset for r in results]),
        modes=np.array([r.modes for r in results]),
    )


def run_ensemble(config: EnsembleConfig) -> EnsembleStats:
    """All realizations, optionally across ``config.workers`` processes."""
    jobs = [(config, r) for r in range(config.n_realizations)]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            results = list(pool.map(_guarded, jobs))
    else:
        results = [_guarded(j) for j in jobs]
    if config.stat_times is not None:
        times = config.stat_times
    else:
        b = config.base
        n_steps, stride = b.n_steps, b.sample_every
        times = np.round(np.arange(n_steps // stride + 1) * stride * b.dt, 12)
        if n_steps % stride:
            times = np.append(times, round(n_steps * b.dt, 12))
    return aggregate(config, results, times)


@dataclass(frozen=True)
class ModeComparison:
    k: float
    t: float
    empirical: float
    stderr: float
    predicted: float
    z: float
    boundary: str  # the theory is periodic; anything else is an approximation


def mode_variance_check(
    stats: EnsembleStats,
    report: StabilityReport,
    k: float,
    t: float,
    onset: Optional[float] = None,
) -> ModeComparison:
    """Compare the ensemble E|mode|^2 at (k, t) with the exact OU prediction.

    ``onset`` defaults to the median empirical onset if recorded, else the
    predicted onset time (infinite for a stable report).
    """
    if onset is None:
        finite = stats.onsets[np.isfinite(stats.onsets)]
        if finite.size:
            onset = float(np.median(finite))
        else:
            onset = report.t_clu if report.unstable else math.inf
    if t > onset:
        raise OnsetExceeded(f"t = {t} is past the onset estimate {onset:.4g}")
    ks = stats.config.mode_wavenumbers
    match = [a for a, kk in enumerate(ks) if abs(kk - k) < 1e-9]
    if not match:
        raise ValueError(f"k = {k} was not recorded")
    a, s = match[0], stats.time_index(t)
    vals = stats.modes[:, a, s]
    emp = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else math.nan
    base = stats.config.base
    dom = DomainParams(base.length, base.radius, base.n_agents)
    gamma = growth_rate(base.shape, k, base.sigma, dom)
    pred = predicted_mode_variance(k, t, base.sigma, gamma)
    z = (emp - pred) / se if se and math.isfinite(se) and se > 0 else math.nan
    return ModeComparison(float(k), float(t), emp, se, pred, z, base.boundary)
