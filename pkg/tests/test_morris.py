import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import Q_740MAH
from ecmsense.ecm import CellState
from ecmsense.errors import EmptyCellError, InvalidInputError, SamplingError
from ecmsense.morris import (
    EcmModel,
    InvalidRun,
    LinearModel,
    MorrisConfig,
    ParameterDistribution,
    SensitivityReport,
    elementary_effect,
    least_important,
    linear_demo_distribution,
    rank_parameters,
    run_morris,
    run_rng,
    sample_start_point,
)
from ecmsense.params import PARAM_NAMES, ParameterSet
from ecmsense.synthetic import generate_synthetic_cycle, reference_truth_schedule


@pytest.fixture(scope="module")
def profile():
    return generate_synthetic_cycle("fuds-like", 120.0, 1.0, seed=3, dt=0.5, mean=0.5)


@pytest.fixture(scope="module")
def ecm_model(profile, ocv_curve):
    return EcmModel(profile, ocv_curve, Q_740MAH, CellState.rested(1.0))


@pytest.fixture(scope="module")
def truth_dist():
    return ParameterDistribution.from_schedule(reference_truth_schedule())


class TestLinearDemo:
    @pytest.mark.parametrize("delta", [0.5, 1.0, 2.0])
    @pytest.mark.parametrize("seed", [0, 7, 2**63 + 5])
    def test_exact_effects(self, delta, seed):
        cfg = MorrisConfig(n_runs=50, delta=delta, seed=seed)
        report = run_morris(linear_demo_distribution(), cfg, LinearModel(), ["linear"])
        assert np.max(np.abs(report.xi[0, :, 0] + 10.0)) <= 1e-12
        assert np.max(np.abs(report.xi[0, :, 1] + 5.0)) <= 1e-12
        np.testing.assert_allclose(report.morris_mean[0], [-10.0, -5.0], rtol=0, atol=1e-12)
        np.testing.assert_allclose(report.enhanced_mean[0], [10.0, 5.0], rtol=0, atol=1e-12)
        assert np.max(report.stdev_of_xi) <= 1e-12

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 40), st.sampled_from([0.5, 1.0, 2.0]), st.integers(0, 2**64 - 1))
    def test_any_n(self, n, delta, seed):
        report = run_morris(linear_demo_distribution(), MorrisConfig(n, delta, seed), LinearModel(), ["x"])
        np.testing.assert_allclose(report.xi[0], np.tile([-10.0, -5.0], (n, 1)), rtol=0, atol=1e-12)

    def test_sigma_scaling_keeps_rank(self):
        dist = linear_demo_distribution()
        for lam in (0.1, 3.0):
            report = run_morris(dist.scaled(lam), MorrisConfig(16), LinearModel(), ["x"])
            assert rank_parameters(report)["x"] == ["theta1", "theta2"]
            np.testing.assert_allclose(report.morris_mean[0], [-10 * lam, -5 * lam], rtol=1e-12)


class TestSampling:
    def test_zero_sigma(self):
        mu = np.array([10.0, 100.0, 500.0, 5000.0, 0.03])
        dist = ParameterDistribution(mu, np.zeros(5))
        np.testing.assert_array_equal(sample_start_point(dist, run_rng(1, 0, 0)), mu)

    def test_clt_bound(self):
        dist = ParameterDistribution([0.03], [0.003], names=("rs",))
        rng = np.random.default_rng(12345)
        draws = np.array([sample_start_point(dist, rng)[0] for _ in range(100_000)])
        assert abs(draws.mean() - 0.03) <= 3 * 0.003 / np.sqrt(100_000)

    def test_same_seed_same_draws(self, truth_dist):
        a = [sample_start_point(truth_dist, run_rng(9, 2, k)) for k in range(5)]
        b = [sample_start_point(truth_dist, run_rng(9, 2, k)) for k in range(5)]
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a[0], sample_start_point(truth_dist, run_rng(9, 3, 0)))

    def test_rejection_exhausted(self):
        n = 40
        dist = ParameterDistribution(np.full(n, 1e-6), np.ones(n), names=tuple(f"p{i}" for i in range(n)))
        with pytest.raises(SamplingError, match="truncate"):
            sample_start_point(dist, run_rng(0, 0, 0))

    def test_positive_draws(self):
        dist = ParameterDistribution([1.0, 1.0], [1.0, 1.0], names=("a", "b"))
        rng = np.random.default_rng(0)
        assert all(np.all(sample_start_point(dist, rng) > 0) for _ in range(200))

    def test_invalid_distribution(self):
        with pytest.raises(InvalidInputError):
            ParameterDistribution([1.0], [-1.0], names=("a",))
        with pytest.raises(InvalidInputError):
            ParameterDistribution([0.0], [1.0], names=("a",))


class TestElementaryEffect:
    def test_zero_sigma_zero_effect(self, ecm_model, truth_dist):
        dist = ParameterDistribution(truth_dist.mu, np.zeros(5))
        for i in range(5):
            assert elementary_effect(truth_dist.mu, i, dist, MorrisConfig(), ecm_model) == 0.0

    @pytest.mark.parametrize("delta", [0.5, 1.0, 2.0])
    def test_rs_affinity(self, ecm_model, truth_dist, profile, delta):
        cfg = MorrisConfig(delta=delta)
        expected = truth_dist.sigma[4] * profile.samples.mean()
        for k in range(5):
            theta = sample_start_point(truth_dist, run_rng(k, 0, 0))
            xi = elementary_effect(theta, 4, truth_dist, cfg, ecm_model)
            assert abs(xi - expected) <= 1e-12
            assert xi > 0

    def test_rs_rms_reduction(self, ecm_model, truth_dist, profile):
        cfg = MorrisConfig(reduction="rms")
        xi = elementary_effect(truth_dist.mu, 4, truth_dist, cfg, ecm_model)
        expected = truth_dist.sigma[4] * np.sqrt(np.mean(profile.samples**2))
        assert xi == pytest.approx(expected, rel=1e-9)

    def test_sign_convention(self):
        dist = ParameterDistribution([1.0], [2.0], names=("a",), positive=False)
        xi = elementary_effect(np.array([1.0]), 0, dist, MorrisConfig(), LinearModel([3.0]))
        # y(theta) - y(theta + sigma) = -3 * 2
        assert xi == -6.0

    def test_non_positive_perturbation(self):
        dist = ParameterDistribution([1.0], [2.0], names=("a",))
        # -5 + 1 * 2 stays negative
        with pytest.raises(InvalidRun):
            elementary_effect(np.array([-5.0]), 0, dist, MorrisConfig(delta=1.0), LinearModel([1.0]))


class TestReport:
    def test_all_sigmas_zero(self, ecm_model, truth_dist):
        dist = ParameterDistribution(truth_dist.mu, np.zeros(5))
        report = run_morris(dist, MorrisConfig(8), ecm_model, [(100, 90)])
        assert np.all(report.morris_mean == 0) and np.all(report.enhanced_mean == 0)
        assert np.all(report.stdev_of_xi == 0)

    def test_rs_row_scales_with_sigma(self, ecm_model, truth_dist):
        cfg = MorrisConfig(16, seed=4)
        base = run_morris(truth_dist, cfg, ecm_model, [(100, 90)])
        for lam in (0.5, 2.0):
            scaled = run_morris(truth_dist.scaled(lam), cfg, ecm_model, [(100, 90)])
            assert abs(scaled.morris_mean[0, 4] - lam * base.morris_mean[0, 4]) <= 1e-12
            assert abs(scaled.enhanced_mean[0, 4] - lam * base.enhanced_mean[0, 4]) <= 1e-12

    def test_enhanced_dominates(self, ecm_model, truth_dist):
        report = run_morris(truth_dist, MorrisConfig(32, seed=5), ecm_model, [(100, 90)])
        assert np.all(report.enhanced_mean >= np.abs(report.morris_mean) - 1e-15)
        assert np.all(report.n_effective <= 32)

    @settings(max_examples=50)
    @given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=30))
    def test_enhanced_dominates_any_sample(self, values):
        xi = np.array(values, dtype=float).reshape(1, -1, 1)
        report = SensitivityReport(("x",), ("a",), xi)
        assert report.enhanced_mean[0, 0] >= abs(report.morris_mean[0, 0]) * (1 - 1e-12)
        if all(v >= 0 for v in values) or all(v <= 0 for v in values):
            assert report.enhanced_mean[0, 0] == pytest.approx(abs(report.morris_mean[0, 0]), rel=1e-12)

    def test_workers_bitwise(self, ecm_model, truth_dist):
        intervals = [(100, 90), (90, 80)]
        serial = run_morris(truth_dist, MorrisConfig(64, seed=77), ecm_model, intervals)
        parallel = run_morris(truth_dist, MorrisConfig(64, seed=77, workers=8), ecm_model, intervals)
        assert serial.xi.tobytes() == parallel.xi.tobytes()

    def test_seed_changes_report(self, ecm_model, truth_dist):
        a = run_morris(truth_dist, MorrisConfig(8, seed=1), ecm_model, ["x"])
        b = run_morris(truth_dist, MorrisConfig(8, seed=2), ecm_model, ["x"])
        assert not np.array_equal(a.xi, b.xi)

    def test_invalid_runs_excluded(self):
        def model(theta):
            if theta[0] > 0:
                raise InvalidRun("positive theta1")
            return LinearModel()(theta)

        dist = linear_demo_distribution()
        report = run_morris(dist, MorrisConfig(40, seed=3), model, ["x"])
        assert 0 < report.n_effective[0, 0] < 40
        assert report.morris_mean[0, 0] == pytest.approx(-10.0)
        resampled = run_morris(dist, MorrisConfig(40, seed=3, resample_on_invalid=True), model, ["x"])
        assert np.all(resampled.n_effective == 40)

    def test_empty_cell(self):
        def model(theta):
            raise InvalidRun("always")

        with pytest.raises(EmptyCellError, match="theta1"):
            run_morris(linear_demo_distribution(), MorrisConfig(4), model, ["x"])

    def test_clamped_model_is_invalid(self, ocv_curve):
        prof = generate_synthetic_cycle("constant", 100.0, 1.0, dt=1.0)
        model = EcmModel(prof, ocv_curve, 10.0, CellState.rested(1.0))
        with pytest.raises(EmptyCellError):
            run_morris(ParameterDistribution.from_schedule(reference_truth_schedule()), MorrisConfig(2), model, ["x"])

    def test_per_interval_models(self, profile, ocv_curve, truth_dist):
        models = [
            EcmModel(profile, ocv_curve, Q_740MAH, CellState.rested(z)) for z in (1.0, 0.5)
        ]
        report = run_morris([truth_dist, truth_dist], MorrisConfig(4), models, [(100, 90), (60, 50)])
        assert report.xi.shape == (2, 4, 5)
        with pytest.raises(InvalidInputError):
            run_morris([truth_dist], MorrisConfig(4), models, [(100, 90), (60, 50)])

    def test_csv_exports(self, tmp_path):
        report = run_morris(linear_demo_distribution(), MorrisConfig(3), LinearModel(), [(100.0, 90.0)])
        report.write_csv(tmp_path / "s.csv")
        report.write_raw_csv(tmp_path / "r.csv")
        with (tmp_path / "s.csv").open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["soc_interval", "parameter", "morris_mean_v", "enhanced_mean_v", "stdev_v", "n_effective"]
        assert rows[1][:2] == ["[100%,90%)", "theta1"]
        assert float(rows[1][2]) == pytest.approx(-10.0)
        assert len((tmp_path / "r.csv").read_text().splitlines()) == 1 + 2 * 3


def report_with(enhanced: dict) -> SensitivityReport:
    xi = np.array([[[enhanced[n] for n in PARAM_NAMES]]])
    return SensitivityReport(("x",), PARAM_NAMES, xi)


class TestRanking:
    def test_sort(self):
        report = report_with({"rs": 30e-3, "tau2": 10e-3, "tau1": 1e-3, "c1": 0.5e-3, "c2": 0.4e-3})
        assert rank_parameters(report)["x"] == ["rs", "tau2", "tau1", "c1", "c2"]

    def test_ties_alphabetical(self):
        report = report_with({n: 1e-3 for n in PARAM_NAMES})
        assert rank_parameters(report)["x"] == sorted(PARAM_NAMES)

    def test_least_important(self):
        report = report_with({"rs": 30e-3, "tau2": 10e-3, "tau1": 1e-3, "c1": 0.5e-3, "c2": 0.4e-3})
        assert least_important(report) == ("c2", "c1", "tau1")

    def test_only_rs_varies(self, ecm_model):
        mu = ParameterSet(10.0, 100.0, 500.0, 5000.0, 0.03).as_array()
        dist = ParameterDistribution(mu, [0, 0, 0, 0, 0.003])
        report = run_morris([dist] * 3, MorrisConfig(8), ecm_model, [(100, 90), (90, 80), (80, 70)])
        assert all(order[0] == "rs" for order in rank_parameters(report).values())


def test_config_validation():
    with pytest.raises(InvalidInputError):
        MorrisConfig(n_runs=0)
    with pytest.raises(InvalidInputError):
        MorrisConfig(delta=0.0)
    with pytest.raises(InvalidInputError):
        MorrisConfig(reduction="median")
    with pytest.raises(InvalidInputError):
        MorrisConfig(seed=2**64)
