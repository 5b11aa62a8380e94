"""Evaluation and experiment harness tests (fast variants; the full
published-value comparisons run in the acceptance suite)."""

import os

import numpy as np
import pytest

from pyrapose.bench import (EvalReport, UNIFORM_CUBE_FACTOR, anytime_sweep,
                            argmax_quantization_mc, blob_localization_suite,
                            evaluate_model, person_box_poses,
                            quantization_study, root_noise_experiment,
                            worker_count)
from pyrapose.camera import CameraModel
from pyrapose.network import NetworkConfig, init_model, valid_cut_points
from pyrapose.synthetic import default_camera, generate_dataset


def small_config():
    return NetworkConfig(pyramids=2, levels=1, joints=17, features=8,
                         input_size=(32, 32),
                         entry_channels=(4, (4, 6), (6, 8), (8, 8)))


def bench_camera():
    return CameraModel(fx=1150.0, fy=1150.0, cx=500.0, cy=500.0,
                       image_size=(1000, 1000), root_depth=5000.0)


class TestQuantizationStudy:
    def test_argmax_mc_matches_analytic(self):
        rng = np.random.default_rng(0)
        for s in (4, 16):
            got = argmax_quantization_mc(s, 120000, rng)
            want = UNIFORM_CUBE_FACTOR * 2000.0 / s
            assert abs(got - want) / want < 0.01

    def test_halving_per_doubling(self):
        rng = np.random.default_rng(1)
        rows = quantization_study(samples=80000, rng=rng, blob_trials=200)
        values = [r["argmax_mm"] for r in rows]
        for a, b in zip(values, values[1:]):
            assert abs(b / a - 0.5) < 0.03

    def test_fine_grid_error_vanishes(self):
        rng = np.random.default_rng(2)
        assert argmax_quantization_mc(256, 50000, rng) < 4.5

    def test_row_schema(self):
        rows = quantization_study(samples=10000,
                                  rng=np.random.default_rng(3),
                                  blob_trials=100)
        assert [r["s"] for r in rows] == [4, 8, 16, 32]
        for r in rows:
            assert set(r) == {"s", "argmax_mm", "softargmax_mm"}

    def test_positive_sample_count_required(self):
        with pytest.raises(ValueError):
            quantization_study(samples=0)


class TestBlobSuite:
    def test_resolution_invariance_shape(self):
        """Soft-argmax error is nearly flat across resolutions while
        argmax error scales with the cell size."""
        out = blob_localization_suite(trials=800,
                                      rng=np.random.default_rng(4))
        soft = [out[s][0] for s in (4, 8, 16, 32)]
        arg = [out[s][1] for s in (4, 8, 16, 32)]
        assert max(soft) / min(soft) < 1.5
        assert max(arg) / min(arg) > 6.0

    def test_softargmax_beats_argmax_at_low_resolution(self):
        out = blob_localization_suite(trials=500,
                                      rng=np.random.default_rng(5))
        assert out[4][0] < out[4][1]


class TestRootNoise:
    def test_zero_sigma_zero_increase(self):
        rows = root_noise_experiment(bench_camera(), sigmas=(0, 50),
                                     trials=100,
                                     rng=np.random.default_rng(6))
        assert rows[0]["mean_increase_mm"] == 0.0

    def test_monotone_in_sigma(self):
        rows = root_noise_experiment(bench_camera(), trials=400,
                                     rng=np.random.default_rng(7))
        values = [r["mean_increase_mm"] for r in rows]
        assert all(a <= b for a, b in zip(values, values[1:]))

    def test_bounded_at_sigma_100(self):
        rows = root_noise_experiment(bench_camera(), sigmas=(100,),
                                     trials=400,
                                     rng=np.random.default_rng(8))
        assert rows[0]["mean_increase_mm"] < 5.0

    def test_person_box_poses_shape(self):
        poses = person_box_poses(3, 17, 5000.0, np.random.default_rng(9))
        assert len(poses) == 3
        for p in poses:
            assert p.shape == (17, 3)
            np.testing.assert_array_equal(p[0], [0.0, 0.0, 5000.0])

    def test_explicit_poses_accepted(self):
        rng = np.random.default_rng(10)
        poses = person_box_poses(4, 17, 5000.0, rng)
        rows = root_noise_experiment(bench_camera(), sigmas=(0, 25),
                                     trials=50, rng=rng, poses=poses)
        assert len(rows) == 2


class TestEvaluateModel:
    def setup_method(self):
        self.config = small_config()
        self.model = init_model(self.config, seed=11)
        self.samples = generate_dataset(6, seed=12, cam=default_camera(32))

    def test_report_fields_and_ranges(self):
        reports = evaluate_model(self.model, self.samples, batch_size=4)
        assert len(reports) == len(valid_cut_points(self.config))
        for r in reports:
            assert isinstance(r, EvalReport)
            assert 0.0 <= r.pck150 <= 1.0
            assert 0.0 <= r.auc <= 1.0
            assert r.mpjpe_mm >= 0.0
            assert r.flops > 0
            assert r.latency_ms is None

    def test_worker_count_env(self, monkeypatch):
        monkeypatch.delenv("SSP_THREADS", raising=False)
        assert worker_count() == 1
        monkeypatch.setenv("SSP_THREADS", "3")
        assert worker_count() == 3
        monkeypatch.setenv("SSP_THREADS", "junk")
        assert worker_count() == 1

    def test_results_identical_across_worker_counts(self, monkeypatch):
        monkeypatch.setenv("SSP_THREADS", "1")
        serial = evaluate_model(self.model, self.samples, batch_size=2)
        monkeypatch.setenv("SSP_THREADS", "2")
        threaded = evaluate_model(self.model, self.samples, batch_size=2)
        for a, b in zip(serial, threaded):
            assert a.as_dict() == b.as_dict()


class TestAnytimeSweep:
    def test_rows_flops_latency(self):
        config = small_config()
        model = init_model(config, seed=13)
        samples = generate_dataset(4, seed=14, cam=default_camera(32))
        reports = anytime_sweep(model, samples, batch_size=4, warmup=1,
                                reps=3)
        cuts = valid_cut_points(config)
        assert len(reports) == len(cuts)
        flops = [r.flops for r in reports]
        assert all(a < b for a, b in zip(flops, flops[1:]))
        for r in reports:
            assert r.latency_ms is not None and r.latency_ms > 0.0
            assert r.warmup == 1 and r.reps == 3

    def test_injected_timer_median(self):
        """The reported latency is the median of the timed repetitions."""
        config = small_config()
        model = init_model(config, seed=15)
        samples = generate_dataset(2, seed=16, cam=default_camera(32))
        ticks = iter(np.arange(0, 1000, 0.5).tolist())
        reports = anytime_sweep(model, samples, batch_size=2, warmup=0,
                                reps=5, timer=lambda: next(ticks))
        for r in reports:
            assert r.latency_ms == pytest.approx(500.0)
