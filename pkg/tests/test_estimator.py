"""Estimator facade tests: sklearn protocol compliance and the
fit/predict surface."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from pyrapose.estimator import PoseRegressor
from pyrapose.synthetic import default_camera, generate_dataset
from pyrapose.training import assemble_batch


def tiny_regressor(**overrides):
    params = dict(pyramids=2, levels=1, joints=17, features=8,
                  input_size=32, entry_channels="4,4:6,6:8,8:8",
                  steps=6, batch_size=4, seed=0)
    params.update(overrides)
    return PoseRegressor(**params)


@pytest.fixture(scope="module")
def tiny_data():
    samples = generate_dataset(8, seed=3, cam=default_camera(32))
    images, pose, mask, _ = assemble_batch(samples)
    visible = mask[..., 0] > 0
    return images, pose, visible


class TestSklearnProtocol:
    def test_get_params_roundtrip(self):
        est = tiny_regressor(lr=0.005)
        params = est.get_params()
        assert params["lr"] == 0.005
        est2 = PoseRegressor(**params)
        assert est2.get_params() == params

    def test_set_params_chains(self):
        est = tiny_regressor()
        assert est.set_params(steps=11).steps == 11

    def test_clone(self):
        est = tiny_regressor(steps=9)
        cloned = clone(est)
        assert cloned is not est
        assert cloned.get_params() == est.get_params()

    def test_predict_before_fit_raises(self, tiny_data):
        images, _, _ = tiny_data
        with pytest.raises(NotFittedError):
            tiny_regressor().predict(images)


class TestFitPredict:
    def test_fit_predict_shapes(self, tiny_data):
        images, pose, visible = tiny_data
        est = tiny_regressor().fit(images, pose, visible=visible)
        out = est.predict(images)
        assert out.shape == (8, 17, 3)
        assert np.all((out > 0.0) & (out < 1.0))

    def test_confidences_are_probabilities(self, tiny_data):
        images, pose, visible = tiny_data
        est = tiny_regressor().fit(images, pose, visible=visible)
        conf = est.predict_confidence(images)
        assert conf.shape == (8, 17)
        assert np.all((conf > 0.0) & (conf <= 1.0))

    def test_score_is_negative_error(self, tiny_data):
        images, pose, visible = tiny_data
        est = tiny_regressor().fit(images, pose, visible=visible)
        score = est.score(images, pose)
        assert -1.0 < score < 0.0

    def test_fit_deterministic_for_seed(self, tiny_data):
        images, pose, _ = tiny_data
        a = tiny_regressor().fit(images, pose).predict(images)
        b = tiny_regressor().fit(images, pose).predict(images)
        np.testing.assert_array_equal(a, b)

    def test_2d_only_depth_mask(self, tiny_data):
        images, pose, visible = tiny_data
        est = tiny_regressor().fit(
            images, pose, visible=visible,
            has_depth=np.zeros(len(images), dtype=bool))
        assert est.predict(images).shape == (8, 17, 3)


class TestValidation:
    def test_wrong_image_shape_rejected(self, tiny_data):
        _, pose, _ = tiny_data
        with pytest.raises(ValueError, match="images"):
            tiny_regressor().fit(np.zeros((8, 32, 32)), pose)

    def test_wrong_image_extent_rejected(self, tiny_data):
        _, pose, _ = tiny_data
        with pytest.raises(ValueError, match="32x32"):
            tiny_regressor().fit(np.zeros((8, 16, 16, 3)), pose)

    def test_wrong_pose_shape_rejected(self, tiny_data):
        images, _, _ = tiny_data
        with pytest.raises(ValueError, match="poses"):
            tiny_regressor().fit(images, np.zeros((8, 5, 3)))

    def test_sample_count_mismatch_rejected(self, tiny_data):
        images, pose, _ = tiny_data
        with pytest.raises(ValueError, match="poses"):
            tiny_regressor().fit(images, pose[:4])

    def test_nonfinite_images_rejected(self, tiny_data):
        images, pose, _ = tiny_data
        bad = images.copy()
        bad[0, 0, 0, 0] = np.nan
        with pytest.raises(ValueError, match="finite"):
            tiny_regressor().fit(bad, pose)

    def test_too_few_samples_rejected(self, tiny_data):
        images, pose, _ = tiny_data
        with pytest.raises(ValueError, match="batch_size"):
            tiny_regressor(batch_size=16).fit(images, pose)
