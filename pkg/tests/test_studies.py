import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import kstest
from sklearn.base import clone

from ionsep.protocols import ProtocolConfig, final_occupations
from ionsep.studies import (
    MonteCarloStudy,
    OptimizationProblem,
    PerturbationSpec,
    WaveformOptimizer,
    free_from_segments,
    monte_carlo_reference,
    monte_carlo_robustness,
    nelder_mead,
    optimize_waveform,
    perturb_segments,
    replace_config_segments,
    sample_rng,
    segments_from_free,
)
from ionsep.waveforms import SEGMENT_NAMES, boundary_values


def grid_minimum(fun, lo, hi, n=401):
    # brute-force oracle on a regular 2-D grid
    axis = np.linspace(lo, hi, n)
    best = min((fun(np.array(p)), p) for p in itertools.product(axis, axis))
    return np.array(best[1]), best[0]


class TestNelderMead:
    def test_quadratic_bowl(self):
        centre = np.array([0.3, -1.2, 2.0])
        res = nelder_mead(lambda x: np.sum((x - centre) ** 2), np.zeros(3), initial_step=0.5,
                          max_evals=2000)
        assert res.converged
        assert np.allclose(res.x, centre, atol=1e-4)

    def test_rosenbrock(self):
        rosen = lambda x: (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2  # noqa: E731
        res = nelder_mead(rosen, [-1.2, 1.0], initial_step=0.5, max_evals=4000)
        assert np.allclose(res.x, [1.0, 1.0], atol=1e-3)

    def test_matches_grid_search(self):
        fun = lambda x: (x[0] - 0.7) ** 2 + 2 * (x[1] + 0.4) ** 2 + 0.5 * x[0] * x[1]  # noqa: E731
        x_grid, f_grid = grid_minimum(fun, -2, 2)
        res = nelder_mead(fun, [0.0, 0.0], initial_step=0.3, max_evals=1000)
        assert res.fun <= f_grid + 1e-9
        assert np.allclose(res.x, x_grid, atol=0.01)

    @given(st.integers(1, 60), st.integers(0, 10**6))
    @settings(max_examples=25)
    def test_budget_is_hard_cap(self, budget, seed):
        rng = np.random.default_rng(seed)
        target = rng.normal(size=3)
        calls = []

        def fun(x):
            calls.append(1)
            return float(np.sum((x - target) ** 2))

        if budget < 4:
            with pytest.raises(ValueError):
                nelder_mead(fun, np.zeros(3), max_evals=budget)
            return
        res = nelder_mead(fun, np.zeros(3), max_evals=budget)
        assert len(calls) == res.n_evals <= budget

    @given(st.integers(0, 10**6))
    @settings(max_examples=20)
    def test_history_non_increasing(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(3, 3))
        q = a @ a.T + 0.1 * np.eye(3)
        res = nelder_mead(lambda x: float(x @ q @ x), rng.normal(size=3), max_evals=300)
        assert np.all(np.diff(res.history) <= 0)
        assert res.fun == min(res.history + [res.fun])

    def test_non_finite_is_infinite(self):
        fun = lambda x: math.nan if x[0] > 0.5 else (x[0] + 1) ** 2  # noqa: E731
        res = nelder_mead(fun, [0.0], initial_step=1.0, max_evals=200)
        assert res.x[0] == pytest.approx(-1.0, abs=1e-3)

    def test_bad_start(self):
        with pytest.raises(ValueError):
            nelder_mead(lambda x: math.inf, [0.0])

    def test_callback(self):
        seen = []
        nelder_mead(lambda x: float(x @ x), [1.0, 1.0], max_evals=30,
                    callback=lambda it, sim, vals: seen.append((it, sim.shape, vals[0])))
        assert seen and seen[0][1] == (3, 2)
        assert [s[0] for s in seen] == list(range(1, len(seen) + 1))


class TestFreeParameterisation:
    def test_round_trip(self, onthefly_config):
        segs = onthefly_config.segments()
        free = free_from_segments(segs)
        assert free.shape == (15,)
        back = segments_from_free(onthefly_config, free)
        for name in SEGMENT_NAMES:
            assert np.allclose(back[name].coefficients, segs[name].coefficients, atol=1e-12)

    @given(st.lists(st.floats(-0.5, 0.5), min_size=15, max_size=15))
    def test_any_free_vector_meets_boundaries(self, free):
        cfg = ProtocolConfig()
        w0 = cfg.crystal.omega0
        floor = w0 / 30
        want = {"down": (w0, 0, floor, 0), "catchB": (floor, 0, w0, 0), "catchM": (floor, 0, w0, 0)}
        for name, seg in segments_from_free(cfg, free).items():
            assert np.allclose(boundary_values(seg), want[name], atol=1e-9 * w0)


class TestOptimizer:
    def test_small_budget_never_worsens(self, onthefly_config):
        res = optimize_waveform(onthefly_config, OptimizationProblem(max_evals=40))
        assert res.n_evals <= 40
        assert res.total <= res.start_total
        assert res.total == pytest.approx(
            float(np.sum(final_occupations(onthefly_config, res.segments))), rel=1e-12)

    def test_budget_too_small_for_stages(self, onthefly_config):
        res = optimize_waveform(onthefly_config, OptimizationProblem(max_evals=10))
        assert res.n_evals <= 10
        assert all(s.get("skipped") for s in res.stages)
        assert res.total == res.start_total

    def test_checkpoint_and_converged_flag(self, onthefly_config):
        calls = []
        prob = OptimizationProblem(max_evals=30, staged=False, target_total=10.0)
        res = optimize_waveform(onthefly_config, prob,
                                lambda stage, sim, vals, free: calls.append((stage, free.shape)))
        assert calls and calls[0] == ("joint", (15,))
        assert res.converged == (res.total <= 10.0)

    def test_replace_config_segments(self, onthefly_config):
        segs = onthefly_config.segments()
        cfg = replace_config_segments(onthefly_config, segs)
        for name in SEGMENT_NAMES:
            assert np.allclose(cfg.segments()[name].coefficients, segs[name].coefficients)

    def test_estimator(self):
        est = WaveformOptimizer(max_evals=20, staged=False)
        assert clone(est).get_params()["max_evals"] == 20
        est.fit()
        assert est.n_evals_ <= 20 and est.total_ == pytest.approx(float(np.sum(est.occupations_)))
        assert np.allclose(est.result_.final_occupations, est.occupations_, atol=1e-12)

    def test_problem_validation(self):
        with pytest.raises(ValueError):
            OptimizationProblem(start="random")
        with pytest.raises(ValueError):
            OptimizationProblem(initial_step=0)


class TestPerturbations:
    def test_zero_fraction_is_identity(self, onthefly_config):
        segs = onthefly_config.segments()
        out = perturb_segments(segs, PerturbationSpec(0.0, seed=3), 0)
        for name in SEGMENT_NAMES:
            assert np.array_equal(out[name].coefficients, segs[name].coefficients)

    def test_offsets_bounded_by_largest_coefficient(self, onthefly_config):
        segs = onthefly_config.segments()
        spec = PerturbationSpec(1e-5, seed=11)
        for i in range(50):
            out = perturb_segments(segs, spec, i)
            for name in SEGMENT_NAMES:
                c = segs[name].coefficients
                assert np.max(np.abs(out[name].coefficients - c)) <= 1e-5 * np.max(np.abs(c))

    def test_offsets_uniform(self, onthefly_config):
        segs = onthefly_config.segments()
        spec = PerturbationSpec(1.0, seed=2024)
        draws = []
        for i in range(3704):  # 27 coefficients each, about 1e5 draws
            out = perturb_segments(segs, spec, i)
            for name in SEGMENT_NAMES:
                c = segs[name].coefficients
                draws.append((out[name].coefficients - c) / np.max(np.abs(c)))
        draws = np.concatenate(draws)
        assert draws.size >= 100_000
        assert kstest(draws, "uniform", args=(-1.0, 2.0)).pvalue > 1e-3

    def test_stream_depends_only_on_seed_and_index(self):
        a = sample_rng(5, 17).uniform(size=4)
        sample_rng(5, 3).uniform(size=100)
        assert np.array_equal(a, sample_rng(5, 17).uniform(size=4))
        assert not np.array_equal(a, sample_rng(5, 18).uniform(size=4))
        assert not np.array_equal(a, sample_rng(6, 17).uniform(size=4))

    @pytest.mark.parametrize("kwargs", [{"max_fraction": -1.0}, {"max_fraction": 1e-5, "n_samples": 0},
                                        {"max_fraction": 1e-5, "seed": -1}])
    def test_spec_validation(self, kwargs):
        with pytest.raises(ValueError):
            PerturbationSpec(**kwargs)


@pytest.fixture(scope="module")
def mc_reference(onthefly_config):
    return monte_carlo_reference(onthefly_config)


class TestMonteCarlo:
    def test_zero_noise_reproduces_reference(self, onthefly_config, mc_reference):
        rep = monte_carlo_robustness(onthefly_config, PerturbationSpec(0.0, 3, 1), mc_reference)
        assert np.max(np.abs(rep.op_mean - rep.nominal_op)) < 1e-12
        assert np.max(np.abs(rep.ab_mean - rep.nominal_ab)) < 1e-12
        assert rep.mean_displacement_quanta == 0.0

    def test_reference_matches_nominal_run(self, onthefly_result, mc_reference):
        assert mc_reference.op[0] == pytest.approx(onthefly_result.fock_op[0], abs=1e-6)
        assert mc_reference.ab[0, 0] == pytest.approx(onthefly_result.fock_ab[0, 0], abs=1e-6)

    def test_deterministic(self, onthefly_config, mc_reference):
        spec = PerturbationSpec(5e-5, 4, 99)
        a = monte_carlo_robustness(onthefly_config, spec, mc_reference)
        b = monte_carlo_robustness(onthefly_config, spec, mc_reference)
        assert a.to_json() == b.to_json()

    def test_displacement_scales_quadratically(self, onthefly_config, mc_reference):
        lo = monte_carlo_robustness(onthefly_config, PerturbationSpec(1e-5, 4, 7), mc_reference)
        hi = monte_carlo_robustness(onthefly_config, PerturbationSpec(5e-5, 4, 7), mc_reference)
        assert hi.mean_displacement_quanta / lo.mean_displacement_quanta == pytest.approx(25.0, rel=0.02)
        assert hi.op_mean[0] < lo.op_mean[0] < lo.nominal_op[0]

    def test_ab_parity(self, onthefly_config, mc_reference):
        rep = monte_carlo_robustness(onthefly_config, PerturbationSpec(5e-5, 4, 7), mc_reference)
        total = np.add.outer(np.arange(rep.ab_mean.shape[0]), np.arange(rep.ab_mean.shape[1]))
        assert np.max(rep.ab_mean[total % 2 == 1]) < 1e-6

    def test_heavy_noise_keeps_every_sample(self, onthefly_config, mc_reference):
        # large displacements grow the Fock cut-off instead of dropping the sample
        rep = monte_carlo_robustness(onthefly_config, PerturbationSpec(2e-4, 3, 7), mc_reference)
        assert rep.n_failed == 0 and rep.n_samples == 3
        assert rep.op_mean.shape == (onthefly_config.n_max + 1,)
        assert rep.mean_displacement_quanta > 5.0

    def test_report_dict(self, onthefly_config, mc_reference):
        rep = monte_carlo_robustness(onthefly_config, PerturbationSpec(1e-5, 2, 7), mc_reference)
        d = rep.to_dict()
        assert len(d["op_mean"]) == 4 and len(d["ab_mean"]) == 4
        assert d["failure_flag"] is False and rep.failure_rate == 0.0

    def test_estimator(self):
        est = MonteCarloStudy(max_fractions=(0.0, 1e-5), n_samples=2, seed=4)
        assert clone(est).get_params() == est.get_params()
        est.fit()
        assert [r.max_fraction for r in est.reports_] == [0.0, 1e-5]
