import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from metseg.exceptions import ShapeError
from metseg.patching import (
    PatchCoord,
    PatchSpec,
    blend_patches,
    extract_patch,
    gaussian_weights,
    label_patch,
    sample_training_crops,
    tile_grid,
)


class TestTileGrid:
    def test_single_patch(self):
        assert tile_grid((64, 64, 64)) == [PatchCoord((0, 0, 0))]

    def test_eight_patches(self):
        coords = tile_grid((96, 96, 96))
        assert len(coords) == 8
        assert {c.origin[0] for c in coords} == {0, 32}

    def test_clamped_last_position(self):
        coords = tile_grid((65, 64, 64))
        assert [c.origin for c in coords] == [(0, 0, 0), (1, 0, 0)]

    def test_lexicographic_order(self):
        coords = tile_grid((100, 80, 70))
        assert coords == sorted(coords)

    def test_short_axis_gets_origin_zero(self):
        assert tile_grid((48, 48, 48)) == [PatchCoord((0, 0, 0))]

    @settings(max_examples=30, deadline=None)
    @given(
        st.tuples(st.integers(4, 20), st.integers(4, 20), st.integers(4, 20)),
        st.integers(2, 6),
        st.integers(1, 6),
    )
    def test_covers_every_voxel_without_duplicates(self, shape, size, stride):
        stride = min(stride, size)
        spec = PatchSpec(size, stride)
        coords = tile_grid(shape, spec)
        assert len(set(coords)) == len(coords)
        hit = np.zeros(shape, dtype=bool)
        for c in coords:
            hit[c.slices(spec.size)] = True
            assert all(o + s <= max(n, s) for o, s, n in zip(c.origin, spec.size, shape))
        assert hit.all()


class TestExtract:
    def test_in_bounds(self, rng):
        vol = rng.normal(size=(2, 10, 10, 10))
        out = extract_patch(vol, PatchCoord((2, 3, 4)), 4)
        np.testing.assert_array_equal(out, vol[:, 2:6, 3:7, 4:8])

    def test_zero_padding(self):
        vol = np.ones((48, 48, 48))
        out = extract_patch(vol, PatchCoord((0, 0, 0)), 64)
        assert out.shape == (64, 64, 64)
        assert out[:48, :48, :48].all() and out.sum() == 48**3

    def test_constant(self):
        vol = np.full((20, 20, 20), 7.0)
        assert np.all(extract_patch(vol, PatchCoord((5, 1, 9)), 8) == 7)


class TestLabelPatch:
    def test_background(self):
        assert not label_patch(np.zeros((8, 8, 8)), PatchCoord((0, 0, 0)), 8)

    def test_one_voxel(self):
        lab = np.zeros((8, 8, 8), np.uint8)
        lab[3, 3, 3] = 3
        assert label_patch(lab, PatchCoord((0, 0, 0)), 8, min_fg=1)
        assert not label_patch(lab, PatchCoord((0, 0, 0)), 8, min_fg=2)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 5))
    def test_monotone(self, seed, min_fg):
        rng = np.random.default_rng(seed)
        lab = (rng.random((6, 6, 6)) < 0.05).astype(np.uint8)
        more = lab | (rng.random((6, 6, 6)) < 0.05)
        c = PatchCoord((1, 1, 1))
        if label_patch(lab, c, 4, min_fg):
            assert label_patch(more, c, 4, min_fg)


class TestCrops:
    def _case(self, fg=True):
        img = np.random.default_rng(0).normal(size=(2, 24, 24, 24)).astype(np.float32)
        lab = np.zeros((24, 24, 24), np.uint8)
        if fg:
            lab[20, 2, 11] = 1
        return img, lab

    def test_background_case(self):
        crops = sample_training_crops(self._case(fg=False), 5, 0.5, 0, size=8)
        assert not any(c.positive for c in crops)

    def test_forced_foreground(self):
        crops = sample_training_crops(self._case(), 5, 0.5, 0, size=8)
        assert sum(c.positive for c in crops[:3]) == 3
        assert all(c.data.shape == (2, 8, 8, 8) for c in crops)

    def test_same_seed_same_origins(self):
        a = sample_training_crops(self._case(), 5, 0.5, 7, size=8)
        b = sample_training_crops(self._case(), 5, 0.5, 7, size=8)
        assert [c.origin for c in a] == [c.origin for c in b]

    def test_bad_fraction(self):
        with pytest.raises(ValueError):
            sample_training_crops(self._case(), 5, 1.5, 0, size=8)


class TestBlend:
    def test_single_constant_patch(self):
        out = blend_patches([(PatchCoord((0, 0, 0)), np.ones((1, 4, 4, 4)))], (4, 4, 4))
        np.testing.assert_allclose(out, 1.0)

    @pytest.mark.parametrize("weighting", ["uniform", "gaussian"])
    def test_equal_values(self, weighting):
        contribs = [(PatchCoord((0, 0, 0)), np.full((1, 4, 4, 4), 0.4)), (PatchCoord((2, 0, 0)), np.full((1, 4, 4, 4), 0.4))]
        out = blend_patches(contribs, (6, 4, 4), weighting)
        np.testing.assert_allclose(out, 0.4)

    def test_zero_one_overlap_is_weight_ratio(self):
        contribs = [(PatchCoord((0, 0, 0)), np.zeros((1, 8, 8, 8))), (PatchCoord((4, 0, 0)), np.ones((1, 8, 8, 8)))]
        out = blend_patches(contribs, (12, 8, 8), "gaussian")[0]
        w = gaussian_weights(8)
        overlap = out[4:8]
        expected = w[0:4] / (w[4:8] + w[0:4])
        np.testing.assert_allclose(overlap, expected, rtol=1e-12)
        assert np.all((overlap > 0) & (overlap < 1))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            blend_patches([(PatchCoord((0, 0, 0)), np.ones((1, 4, 4, 4))), (PatchCoord((0, 0, 0)), np.ones((2, 4, 4, 4)))], (4, 4, 4))

    @pytest.mark.parametrize("weighting", ["uniform", "gaussian"])
    @pytest.mark.parametrize("shape", [(13, 9, 16), (8, 8, 8), (20, 11, 9)])
    def test_reconstruction_identity(self, rng, weighting, shape):
        vol = rng.random((3, *shape))
        spec = PatchSpec(8, 3)
        contribs = [(c, extract_patch(vol, c, spec.size)) for c in tile_grid(shape, spec)]
        np.testing.assert_allclose(blend_patches(contribs, shape, weighting), vol, atol=1e-6)

    def test_gaussian_sigma(self):
        w = gaussian_weights(64)
        assert w.max() == 1.0
        x = np.arange(64) - 31.5
        np.testing.assert_allclose(w[:, 31, 31] / w[31, 31, 31], np.exp(-0.5 * (x / 8) ** 2) / np.exp(-0.5 * (0.5 / 8) ** 2))
