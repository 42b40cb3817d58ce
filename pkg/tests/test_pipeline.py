import json

import numpy as np
import pytest
import torch

from metseg.data import ALL_MODALITIES, ModalityId, parse_modalities
from metseg.evaluation import aggregate_means
from metseg.exceptions import ConfigError
from metseg.models import DenseNet3D, regions_to_labels, snapshot
from metseg.models.segmentor import ResidualUNet3D
from metseg.patching import PatchSpec, tile_grid
from metseg.pipeline import (
    AblationSpec,
    GateSettings,
    PipelineConfig,
    RunManifest,
    cost_report,
    enumerate_subsets,
    render_tables,
    run_ablation,
    run_gated_inference,
    sliding_window_regions,
)
from metseg.pipeline import ablation as ablation_mod
from metseg.pipeline.manifest import unique_path


@pytest.fixture(scope="module")
def models(tiny_config):
    torch.manual_seed(0)
    return DenseNet3D(tiny_config.detector_config()), ResidualUNet3D(tiny_config.segmentor_config())


class TestGating:
    @pytest.mark.parametrize("case", range(2))
    def test_flag_all_is_ungated(self, tiny_config, models, small_cases, case):
        det, seg = models
        vol, _ = small_cases[case]
        settings = GateSettings(spec=tiny_config.patch_spec(), threshold=0.0)
        gated = run_gated_inference(vol, det, seg, settings)
        ungated = sliding_window_regions(seg, vol, settings.spec)
        np.testing.assert_array_equal(gated.region_probs, ungated)
        np.testing.assert_array_equal(gated.labels.data, regions_to_labels(ungated).data)
        assert gated.cost.segmentor_invocations == gated.cost.flagged_patches == len(tile_grid(vol.spatial_shape, settings.spec))

    def test_flag_none_is_background(self, tiny_config, models, small_cases):
        det, seg = models
        vol, _ = small_cases[0]
        res = run_gated_inference(vol, det, seg, GateSettings(spec=tiny_config.patch_spec(), threshold=1.0))
        assert not res.labels.data.any()
        assert res.cost.segmentor_invocations == 0
        assert res.cost.gated_gflops == res.cost.detector_gflops

    @pytest.mark.parametrize("threshold", [0.3, 0.5, 0.7])
    def test_unflagged_only_voxels_are_background(self, tiny_config, models, small_cases, threshold):
        det, seg = models
        vol, _ = small_cases[1]
        spec = tiny_config.patch_spec()
        res = run_gated_inference(vol, det, seg, GateSettings(spec=spec, threshold=threshold))
        covered = np.zeros(vol.spatial_shape, bool)
        for c in res.flagged:
            covered[c.slices(spec.size)] = True
        assert not res.labels.data[~covered].any()
        assert res.cost.segmentor_invocations == len(res.flagged)

    def test_modality_mismatch(self, tiny_config, models, small_cases):
        det, seg = models
        ckpt = snapshot("detector", det, modalities=("t1", "t2", "f"))
        with pytest.raises(ConfigError, match="modalities"):
            run_gated_inference(small_cases[0][0], ckpt, seg, GateSettings(spec=tiny_config.patch_spec()))


class TestCost:
    def test_nothing_flagged(self):
        r = cost_report(10, 0, 7.0, 60.0, 478.0)
        assert r.gated_gflops == 70.0 and r.segmentor_gflops == 0.0

    def test_reference_scenario(self):
        # one window: detector on the patch, segmentor on it, against one reference window
        r = cost_report(1, 1, 7.0, 60.0, 478.0)
        assert r.reduction == pytest.approx(1 - 67 / 478)
        assert r.reduction == pytest.approx(0.85, abs=0.03)

    def test_negative_reduction(self):
        r = cost_report(10, 10, 7.0, 60.0, 100.0)
        assert r.reduction < 0

    def test_invariants(self):
        with pytest.raises(ValueError):
            cost_report(3, 4, 1.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            cost_report(-1, 0, 1.0, 1.0, 1.0)


class TestConfig:
    def test_round_trip(self, tmp_path, desk_config):
        for name in ("c.yaml", "c.json"):
            assert PipelineConfig.load(desk_config.save(tmp_path / name)) == desk_config

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown config keys: bogus"):
            PipelineConfig.from_dict({"bogus": 1})

    @pytest.mark.parametrize("bad", [{"det_threshold": 1.5}, {"modalities": "t1,xx"}, {"config_version": 9},
                                     {"seeds": []}, {"stride": 100}, {"synth_shape": 4}])
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict(bad)

    def test_int_shape_expands(self):
        assert PipelineConfig(synth_shape=32).synth_shape == (32, 32, 32)

    def test_override_skips_none(self, desk_config):
        assert desk_config.override(stride=None) == desk_config

    def test_schedules_from_config(self, desk_config):
        assert desk_config.detector_schedule(1).warmup_epochs == 0
        assert desk_config.segmentor_schedule(120).max_epoch == 3


class TestManifest:
    def test_write_once(self, tmp_path):
        m = RunManifest("evaluate", {"a": 1}, seed=0)
        path = m.write(tmp_path / "manifest.json")
        assert RunManifest.load(path) == m
        with pytest.raises(FileExistsError):
            m.write(path)

    def test_unique_path(self, tmp_path):
        assert unique_path(tmp_path, "m").name == "m.json"
        (tmp_path / "m.json").write_text("{}")
        assert unique_path(tmp_path, "m").name == "m-2.json"


class TestTables:
    def _agg(self, *vals):
        return aggregate_means([{r: {"lesionwise_dsc": v, "legacy_dsc": v} for r in ("WT", "TC", "ET", "AVG")} for v in vals])

    def test_single_run_cell(self):
        out = render_tables({"t1c": self._agg(0.7384)}, "csv")
        assert "73.84 (0.00)" in out

    def test_three_run_cell(self):
        out = render_tables({"t1c": self._agg(0.5217, 0.5332, 0.5447)}, "csv")
        assert "53.32 (1.15)" in out

    def test_missing_column_dash(self):
        out = render_tables({"t1c": self._agg(0.5)}, "csv").splitlines()
        header, row = out[0].split(","), out[1].split(",")
        assert row[header.index("Legacy DSC NETC")] == "—"

    def test_failed_row(self):
        out = render_tables({"t1c": self._agg(0.5), "f": None}, "markdown")
        assert "| f | — |" in out

    def test_marks(self):
        reps = {"a": self._agg(0.9), "b": self._agg(0.8), "c": self._agg(0.1)}
        md = render_tables(reps, "markdown")
        assert "**90.00 (0.00)**" in md and "_80.00 (0.00)_" in md
        txt = render_tables(reps, "text")
        assert "90.00 (0.00) *" in txt and "80.00 (0.00) +" in txt

    def test_column_order(self):
        header = render_tables({"x": self._agg(0.5)}, "csv").splitlines()[0].split(",")
        assert header == ["Modalities"] + [f"Legacy DSC {r}" for r in ("WT", "TC", "ET", "AVG", "NETC", "SNFH")] + [
            f"Lesion-wise DSC {r}" for r in ("WT", "TC", "ET", "AVG")]
        comp = render_tables({"x": self._agg(0.5)}, "csv", "comparison").splitlines()[0].split(",")
        assert comp[1:5] == [f"Legacy DSC {r}" for r in ("WT", "TC", "ET", "AVG")]
        assert comp[5] == "Legacy HD95 WT" and comp[-1] == "Lesion-wise HD95 AVG"

    def test_empty(self):
        with pytest.raises(ValueError):
            render_tables({})


class TestAblation:
    def test_fifteen_subsets(self):
        subsets = enumerate_subsets()
        assert len(subsets) == 15 == len(set(map(frozenset, subsets)))
        assert subsets[0] == (ModalityId.T1,) and subsets[-1] == ALL_MODALITIES

    def test_one_modality(self):
        assert enumerate_subsets([ModalityId.FLAIR]) == [(ModalityId.FLAIR,)]

    def test_duplicates_rejected(self, tiny_config):
        with pytest.raises(ValueError):
            AblationSpec(tiny_config, ("t1,f", "f,t1"))

    def test_default_spec_budget(self, tiny_config):
        spec = AblationSpec(tiny_config)
        assert len(spec.subsets) == 15 and spec.budget == (1, 2)

    def test_failure_isolation(self, tiny_config, monkeypatch):
        real = ablation_mod.train_two_stage

        def flaky(cfg, *a, **kw):
            if cfg.modalities == "t2":
                raise RuntimeError("boom")
            return real(cfg, *a, **kw)

        monkeypatch.setattr(ablation_mod, "train_two_stage", flaky)
        result = run_ablation(AblationSpec(tiny_config, ("t1", "t2")))
        assert result.reports["t1"] is not None and result.reports["t2"] is None
        assert "boom" in result.failures["t2"]
        assert json.loads(json.dumps(result.to_dict()))["best"] == "t1"
        assert "| t2 | — |" in render_tables(result.reports, "markdown")

    @pytest.mark.slow
    def test_all_subsets_run(self, tiny_config, tmp_path):
        result = run_ablation(AblationSpec(tiny_config), out_dir=tmp_path)
        assert not result.failures
        assert len(result.reports) == 15
        assert len(render_tables(result.reports, "csv").splitlines()) == 16
        assert result.best in result.reports
        assert (tmp_path / "t1+t1c+t2+f" / "seed0" / "detector.pt").is_file()
