import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline

from metseg.data import LabelVolume, MultiModalVolume
from metseg.estimators import PatchDetector, RegionSegmentor, TwoStageSegmenter, ZScoreNormalizer
from metseg.exceptions import DataError, ShapeError
from metseg.patching import tile_grid
from metseg.validation import check_labels, check_volumes


@pytest.fixture(scope="module")
def xy(small_cases):
    X, y = zip(*small_cases)
    return list(X), list(y)


class TestValidation:
    def test_bare_volume_is_batch_of_one(self, small_cases):
        assert len(check_volumes(small_cases[0][0])) == 1

    def test_raw_array(self):
        (vol,) = check_volumes(np.zeros((2, 4, 4, 4)))
        assert isinstance(vol, MultiModalVolume) and vol.data.shape == (2, 4, 4, 4)

    def test_errors(self):
        with pytest.raises(ShapeError):
            check_volumes([np.zeros((4, 4, 4))])
        with pytest.raises(ShapeError):
            check_volumes([np.zeros((2, 4, 4, 4))], n_channels=3)
        with pytest.raises(DataError):
            check_volumes([])

    def test_label_mismatch(self):
        vols = check_volumes([np.zeros((1, 4, 4, 4))])
        with pytest.raises(ShapeError):
            check_labels([np.zeros((4, 4, 5), np.uint8)], vols)
        with pytest.raises(DataError):
            check_labels([], vols)


class TestParams:
    def test_clone_and_params(self, tiny_config):
        est = TwoStageSegmenter(tiny_config, random_state=3)
        assert est.get_params() == {"config": tiny_config, "random_state": 3}
        c = clone(est)
        assert c.config == tiny_config and c.random_state == 3 and not hasattr(c, "detector_")

    def test_not_fitted(self, xy):
        with pytest.raises(NotFittedError):
            PatchDetector().predict(xy[0])

    def test_normalizer_in_pipeline(self, tiny_config, xy):
        pipe = make_pipeline(ZScoreNormalizer(), RegionSegmentor(tiny_config))
        assert pipe.steps[0][0] == "zscorenormalizer"
        out = ZScoreNormalizer().fit_transform(xy[0])
        assert len(out) == 2 and out[0].data.dtype == np.float32


class TestFit:
    def test_two_stage(self, tiny_config, xy):
        X, y = xy
        est = TwoStageSegmenter(tiny_config).fit(X, y)
        preds = est.predict(X)
        assert all(isinstance(p, LabelVolume) and p.shape == v.spatial_shape for p, v in zip(preds, X))
        (labels, cost), _ = est.predict_with_cost(X)
        assert cost.segmentor_invocations == cost.flagged_patches
        assert 0.0 <= est.score(X, y) <= 1.0

    def test_detector(self, tiny_config, xy):
        X, y = xy
        det = PatchDetector(tiny_config).fit(X, y)
        probs = det.predict_proba(X)
        n = len(tile_grid(X[0].spatial_shape, tiny_config.patch_spec()))
        assert probs[0].shape == (n,)
        assert det.predict(X)[0].dtype == bool
        assert 0.0 <= det.score(X, y) <= 1.0

    def test_raw_arrays(self, tiny_config, xy):
        X, y = xy
        cfg = tiny_config.override(modalities="t1,t1c")
        raw_X = [v.select("t1,t1c").data for v in X]
        raw_y = [lab.data for lab in y]
        seg = RegionSegmentor(cfg).fit(raw_X, raw_y)
        probs = seg.predict_proba(raw_X)
        assert probs[0].shape == (3, *raw_y[0].shape)
        assert np.all((probs[0] >= 0) & (probs[0] <= 1))
