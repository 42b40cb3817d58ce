"""scikit-learn style wrappers around the two-stage pipeline.

Samples are whole volumes: ``X`` is a list of :class:`MultiModalVolume`
(or ``[C, D, H, W]`` arrays) and ``y`` a list of :class:`LabelVolume`
(or ``[D, H, W]`` integer arrays). Every model estimator takes a
:class:`PipelineConfig` plus a seed, so ``get_params``/``set_params`` and
``clone`` behave as usual.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from metseg.data.volumes import LabelVolume, MultiModalVolume, normalize, parse_modalities
from metseg.evaluation.report import evaluate_case
from metseg.models.decode import regions_to_labels
from metseg.pipeline.config import PipelineConfig
from metseg.pipeline.cost import CostReport
from metseg.pipeline.inference import detector_patch_probs, run_gated_inference, sliding_window_regions
from metseg.patching import tile_grid
from metseg.training.loops import detector_patch_accuracy, train_detector, train_segmentor
from metseg.validation import check_labels, check_volumes


class ZScoreNormalizer(TransformerMixin, BaseEstimator):
    """Per-volume, per-channel z-score over nonzero voxels. Stateless."""

    def fit(self, X, y=None):
        check_volumes(X)
        self.n_features_in_ = 1
        return self

    def transform(self, X):
        return [normalize(v) for v in check_volumes(X)]


class _ConfiguredEstimator(BaseEstimator):
    def __init__(self, config: PipelineConfig | None = None, random_state: int = 0):
        self.config = config
        self.random_state = random_state

    def _cfg(self) -> PipelineConfig:
        return self.config if self.config is not None else PipelineConfig()

    def _volumes(self, X) -> list[MultiModalVolume]:
        """Volumes reduced to the configured modality subset, in its order."""
        mods = parse_modalities(self._cfg().modalities)
        vols = check_volumes(X)
        return [v if v.modalities == mods else v.select(mods) for v in vols]

    def _cases(self, X, y):
        vols = self._volumes(X)
        return list(zip(vols, check_labels(y, vols)))


class PatchDetector(_ConfiguredEstimator):
    """Patch-level lesion detector; ``predict`` returns tile-grid flags per volume."""

    def fit(self, X, y):
        cfg = self._cfg()
        self.checkpoint_ = train_detector(
            self._cases(X, y),
            cfg.detector_config(),
            cfg.adam(),
            cfg.detector_schedule(),
            epochs=cfg.det_epochs,
            batch_size=cfg.det_batch_size,
            crops_per_patient=cfg.det_crops_per_patient,
            fg_fraction=cfg.fg_fraction,
            seed=self.random_state,
            augmentation=cfg.augmentation_config(),
            min_fg=cfg.min_fg,
            val_every=cfg.det_val_every,
            stride=cfg.stride,
        )
        self.model_ = self.checkpoint_.build_model()
        return self

    def predict_proba(self, X) -> list[np.ndarray]:
        check_is_fitted(self, "model_")
        spec = self._cfg().patch_spec()
        return [
            detector_patch_probs(self.model_, v, tile_grid(v.spatial_shape, spec), spec.size)
            for v in self._volumes(X)
        ]

    def predict(self, X) -> list[np.ndarray]:
        gate = self._cfg().gate_settings()
        return [gate.flags(p) for p in self.predict_proba(X)]

    def score(self, X, y) -> float:
        """Tile-grid patch accuracy."""
        check_is_fitted(self, "model_")
        cfg = self._cfg()
        return detector_patch_accuracy(self.model_, self._cases(X, y), cfg.patch_spec(), cfg.min_fg, cfg.det_threshold)


class RegionSegmentor(_ConfiguredEstimator):
    """Ungated sliding-window segmentor."""

    def fit(self, X, y):
        cfg = self._cfg()
        self.checkpoint_ = train_segmentor(
            self._cases(X, y),
            cfg.segmentor_config(),
            cfg.sgd(),
            cfg.segmentor_schedule(),
            iterations=cfg.seg_iterations,
            batch_size=cfg.seg_batch_size,
            iters_per_epoch=cfg.seg_iters_per_epoch,
            fg_fraction=cfg.fg_fraction,
            seed=self.random_state,
            augmentation=cfg.augmentation_config(),
        )
        self.model_ = self.checkpoint_.build_model()
        return self

    def predict_proba(self, X) -> list[np.ndarray]:
        """Region probabilities ``[3, D, H, W]`` (WT, TC, ET) per volume."""
        check_is_fitted(self, "model_")
        cfg = self._cfg()
        return [
            sliding_window_regions(self.model_, v, cfg.patch_spec(), cfg.weighting, cfg.infer_batch_size)
            for v in self._volumes(X)
        ]

    def predict(self, X) -> list[LabelVolume]:
        cfg = self._cfg()
        vols = self._volumes(X)
        return [
            regions_to_labels(p, cfg.region_thresholds, v.spacing, v.affine, v.case_id)
            for v, p in zip(vols, self.predict_proba(vols))
        ]

    def score(self, X, y) -> float:
        """Mean lesion-wise WT Dice."""
        return _mean_wt_dsc(self.predict(X), check_labels(y), self._cfg())


class TwoStageSegmenter(_ConfiguredEstimator):
    """Detector-gated segmentation: segment only the patches the detector flags."""

    def fit(self, X, y):
        cases = self._cases(X, y)
        self.detector_ = PatchDetector(self.config, self.random_state).fit(*zip(*cases))
        self.segmentor_ = RegionSegmentor(self.config, self.random_state).fit(*zip(*cases))
        return self

    def predict_with_cost(self, X) -> list[tuple[LabelVolume, CostReport]]:
        check_is_fitted(self, ("detector_", "segmentor_"))
        settings = self._cfg().gate_settings()
        out = []
        for v in self._volumes(X):
            res = run_gated_inference(v, self.detector_.model_, self.segmentor_.model_, settings)
            out.append((res.labels, res.cost))
        return out

    def predict(self, X) -> list[LabelVolume]:
        return [labels for labels, _ in self.predict_with_cost(X)]

    def score(self, X, y) -> float:
        """Mean lesion-wise WT Dice."""
        return _mean_wt_dsc(self.predict(X), check_labels(y), self._cfg())


def _mean_wt_dsc(preds, labels, cfg: PipelineConfig) -> float:
    mcfg = cfg.match_config()
    return float(np.mean([
        evaluate_case(p, g, mcfg, include_labels=False).value("WT", "lesionwise_dsc")
        for p, g in zip(preds, labels)
    ]))
