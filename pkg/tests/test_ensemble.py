import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from opinionlab.ensemble import (
    EnsembleConfig,
    OnsetExceeded,
    RealizationError,
    ZeroMode,
    aggregate,
    empirical_mode,
    mode_variance_check,
    run_ensemble,
    run_realization,
)
from opinionlab.influence import builtin_shapes
from opinionlab.rng import derive_seed
from opinionlab.sde_sim import SimConfig, run
from opinionlab.clusters import detect_clusters
from opinionlab.stability import DomainParams, growth_rate, predict_clusters

SHAPES = builtin_shapes()
K1 = 2 * math.pi / 10


def small_config(**kw):
    base = dict(n_agents=60, sigma=0.1, t_end=3.0, boundary="reflecting", seed=11)
    base.update(kw.pop("base", {}))
    return EnsembleConfig(base=SimConfig(**base), **kw)


class TestEmpiricalMode:
    def test_coherent(self):
        assert empirical_mode(np.zeros(400), K1, 10.0) == pytest.approx(20.0)

    def test_zero_mode(self):
        with pytest.raises(ZeroMode):
            empirical_mode(np.zeros(4), 0.0, 10.0)

    def test_off_grid(self):
        with pytest.raises(ValueError):
            empirical_mode(np.zeros(4), 1.0, 10.0)

    @given(
        x=st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=50),
        n=st.integers(1, 30),
    )
    def test_conjugate(self, x, n):
        k = n * K1
        assert empirical_mode(x, -k, 10.0) == empirical_mode(x, k, 10.0).conjugate()

    def test_uniform_unit_variance(self):
        rng = np.random.default_rng(8)
        vals = np.array([abs(empirical_mode(rng.uniform(0, 10, 100), 4 * K1, 10.0)) ** 2 for _ in range(10_000)])
        se = vals.std(ddof=1) / math.sqrt(vals.size)
        assert abs(vals.mean() - 1.0) < 3 * se

    def test_periodic_invariance(self):
        x = np.random.default_rng(1).uniform(0, 10, 30)
        assert empirical_mode(x + 10.0, 3 * K1, 10.0) == pytest.approx(empirical_mode(x, 3 * K1, 10.0), abs=1e-10)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            EnsembleConfig(n_realizations=0)
        with pytest.raises(ValueError):
            EnsembleConfig(observables={"speed"})
        with pytest.raises(ValueError):
            EnsembleConfig(observables={"modes"})
        with pytest.raises(ZeroMode):
            EnsembleConfig(observables={"modes"}, mode_wavenumbers=(0.0,))
        with pytest.raises(ValueError):
            EnsembleConfig(observables={"modes"}, mode_wavenumbers=(1.0,))

    def test_derived_seeds(self):
        cfg = small_config()
        seeds = [cfg.realization_config(r).seed for r in range(50)]
        assert len(set(seeds)) == 50
        assert seeds[3] == derive_seed(11, 3)

    def test_default_gap(self):
        assert small_config().cluster_gap == 0.5


class TestRunEnsemble:
    def test_single_realization(self):
        cfg = small_config(n_realizations=1)
        stats = run_ensemble(cfg)
        assert stats.width_se is None and stats.count_se is None
        traj = run(cfg.realization_config(0))
        for s, (t, x) in enumerate(zip(traj.times, traj.positions)):
            cs = detect_clusters(x, 0.5, t)
            assert stats.count_mean[s] == cs.count(10)
            w = cs.mean_width(10)
            assert (math.isnan(w) and math.isnan(stats.width_mean[s])) or stats.width_mean[s] == w

    def test_times(self):
        stats = run_ensemble(small_config(n_realizations=2, base=dict(t_end=2.5)))
        assert list(stats.times) == [0.0, 1.0, 2.0, 2.5]

    def test_isolated_rerun(self):
        cfg = small_config(n_realizations=5, observables={"widths", "counts", "modes"}, mode_wavenumbers=(K1, 5 * K1))
        stats = run_ensemble(cfg)
        r = run_realization(cfg, 3)
        assert np.array_equal(stats.modes[3], r.modes, equal_nan=True)
        assert np.array_equal(stats.counts[3], r.counts, equal_nan=True)

    def test_parallel_matches_serial(self):
        cfg = small_config(n_realizations=6, observables={"widths", "counts", "onset"})
        a = run_ensemble(cfg)
        b = run_ensemble(EnsembleConfig(**{**cfg.__dict__, "workers": 2}))
        assert np.array_equal(a.widths, b.widths, equal_nan=True)
        assert np.array_equal(a.counts, b.counts, equal_nan=True)
        assert np.array_equal(a.onsets, b.onsets, equal_nan=True)

    def test_reorder_invariant(self):
        cfg = small_config(n_realizations=8)
        results = [run_realization(cfg, r) for r in range(8)]
        times = run_ensemble(small_config(n_realizations=1)).times
        a = aggregate(cfg, results, times)
        b = aggregate(cfg, results[::-1], times)
        assert np.allclose(a.width_mean, b.width_mean, atol=1e-12, equal_nan=True)
        perm = np.random.default_rng(0).permutation(8)
        shuffled = np.nanmean(a.widths[perm], axis=0)
        assert np.allclose(shuffled, a.width_mean, atol=1e-12, equal_nan=True)

    def test_failure_carries_index(self):
        cfg = small_config(n_realizations=3, stat_times=(0.0, 0.55))
        with pytest.raises(RealizationError) as info:
            run_ensemble(cfg)
        assert info.value.index == 0

    def test_summaries(self):
        stats = run_ensemble(small_config(n_realizations=4))
        dist = stats.count_distribution(3.0)
        assert sum(dist.values()) == 4
        count, frac = stats.modal_count(3.0)
        assert dist[count] == frac * 4 == max(dist.values())
        d = stats.to_dict()
        assert d["n_realizations"] == 4 and len(d["times"]) == 4
        assert {row[1] for row in stats.long_rows()} == {"width", "count"}
        with pytest.raises(ValueError):
            stats.time_index(0.5)


class TestModeCheck:
    def dom(self, cfg):
        return DomainParams(cfg.base.length, cfg.base.radius, cfg.base.n_agents)

    @pytest.mark.parametrize("name", ["phi1", "phi2", "phi6"])
    def test_initial_unit_variance(self, name):
        cfg = EnsembleConfig(
            base=SimConfig(n_agents=200, influence=name, sigma=0.0, t_end=0.1, boundary="periodic", seed=3),
            n_realizations=400, observables={"modes"}, mode_wavenumbers=(K1, 4 * K1), stat_times=(0.0,),
        )
        stats = run_ensemble(cfg)
        rep = predict_clusters(SHAPES[name], 0.0, self.dom(cfg))
        for k in cfg.mode_wavenumbers:
            cmp = mode_variance_check(stats, rep, k, 0.0, onset=math.inf)
            assert cmp.predicted == 1.0 and abs(cmp.z) < 3

    def test_onset_guard(self):
        cfg = EnsembleConfig(
            base=SimConfig(n_agents=100, t_end=5.0, boundary="periodic"),
            n_realizations=2, observables={"modes"}, mode_wavenumbers=(K1,),
        )
        stats = run_ensemble(cfg)
        rep = predict_clusters(SHAPES["phi2"], 0.0, self.dom(cfg))
        with pytest.raises(OnsetExceeded):
            mode_variance_check(stats, rep, K1, 5.0, onset=4.0)
        with pytest.raises(ValueError):
            mode_variance_check(stats, rep, 2 * K1, 1.0, onset=4.0)

    def test_stable_mode_bounded(self):
        # above sigma_c every mode relaxes to sigma^2 k^2 / (2 |gamma_k|)
        k = 4 * K1
        cfg = EnsembleConfig(
            base=SimConfig(n_agents=500, sigma=0.5, t_end=20.0, boundary="periodic", seed=5),
            n_realizations=200, observables={"modes"}, mode_wavenumbers=(k,), stat_times=(20.0,),
        )
        stats = run_ensemble(cfg)
        dom = self.dom(cfg)
        rep = predict_clusters(SHAPES["phi2"], 0.5, dom)
        cmp = mode_variance_check(stats, rep, k, 20.0)
        gamma = growth_rate(SHAPES["phi2"], k, 0.5, dom)
        assert gamma < 0
        stationary = 0.25 * k**2 / (2 * abs(gamma))
        assert cmp.predicted == pytest.approx(stationary, rel=0.01)
        assert abs(cmp.z) < 3
        assert cmp.boundary == "periodic"
