import numpy as np
import pytest

from burst_io import Frame
from compositing import (
    annotate_face_motion,
    composite_final,
    composite_mask,
    compute_flow_mask,
    face_protection_mask,
    refine_mask_edge_aware,
)
from conftest import make_trackset
from models import FaceRegion


def _ramp_flow():
    # magnitudes 0.0, 0.1, ..., 10.0 along one row
    flow = np.zeros((1, 101, 2))
    flow[0, :, 0] = np.arange(101) / 10.0
    return flow


class TestFlowMask:
    def test_ramp_between_alpha_and_beta(self):
        mask = compute_flow_mask([_ramp_flow(), 0.5 * _ramp_flow()])
        assert mask.reference == pytest.approx(9.9)
        assert mask.m_flow[0, 0] == 0.0
        assert mask.m_flow[0, 15] == 0.0
        assert mask.m_flow[0, 40] == 1.0
        assert mask.m_flow[0, 24] == pytest.approx((2.4 - 0.16 * 9.9) / (0.16 * 9.9))

    def test_largest_magnitude_over_pairs(self):
        small = np.zeros((2, 2, 2))
        large = np.zeros((2, 2, 2))
        large[0, 0] = (3.0, 4.0)
        assert compute_flow_mask([small, large]).magnitude[0, 0] == pytest.approx(5.0)

    def test_static_scene(self):
        mask = compute_flow_mask([np.zeros((8, 8, 2))])
        assert mask.m_flow.max() == 0.0

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            compute_flow_mask([])
        with pytest.raises(ValueError):
            compute_flow_mask([_ramp_flow()], alpha=0.5, beta=0.5)


class TestGuidedFilter:
    def test_constant_mask_is_kept(self, texture):
        refined = refine_mask_edge_aware(np.full(texture.shape[:2], 0.7), texture)
        assert np.allclose(refined, 0.7, atol=1e-6)

    def test_edge_follows_the_guide(self):
        guide = np.full((32, 48), 0.1)
        guide[:, 24:] = 0.9
        mask = np.zeros((32, 48))
        mask[:, 24:] = 1.0
        refined = refine_mask_edge_aware(mask, guide)
        assert refined[:, 21].max() < 0.1
        assert refined[:, 27].min() > 0.9

    def test_size_mismatch(self, texture):
        with pytest.raises(ValueError):
            refine_mask_edge_aware(np.zeros((10, 10)), texture)


class TestFaces:
    def test_protection_depends_on_motion(self):
        still = FaceRegion(center=(10.0, 10.0), inner_radius=2.0, outer_radius=4.0)
        moving = FaceRegion(center=(30.0, 10.0), inner_radius=2.0, outer_radius=4.0, motion_mean=5.0)
        calm = FaceRegion(center=(50.0, 10.0), inner_radius=2.0, outer_radius=4.0, motion_mean=0.5)
        mask = face_protection_mask([still, moving, calm], (20, 64))
        assert mask[10, 10] == pytest.approx(1.0)
        assert mask[10, 30] == 0.0
        assert mask[10, 50] == pytest.approx(1.0)

    def test_regions_scale_to_finer_level(self):
        face = FaceRegion(center=(10.0, 10.0), inner_radius=2.0, outer_radius=4.0)
        mask = face_protection_mask([face], (48, 48), factor=2.0)
        assert mask[20, 20] == pytest.approx(1.0)
        assert mask[20, 27] > 0.0
        assert mask[20, 30] == 0.0

    def test_annotate_face_motion(self):
        # 60 x 80 has a diagonal of 100 px
        track_set = make_trackset(
            [[[50.0, 50.0], [53.0, 54.0], [56.0, 58.0]], [[5.0, 5.0], [5.0, 5.0], [5.0, 5.0]]],
            width=60,
            height=80,
        )
        face = FaceRegion(center=(50.0, 50.0), inner_radius=4.0, outer_radius=10.0)
        empty = FaceRegion(center=(30.0, 70.0), inner_radius=2.0, outer_radius=4.0)
        annotated = annotate_face_motion([face, empty], track_set)
        assert annotated[0].motion_mean == pytest.approx(10.0)
        assert annotated[1].motion_mean == 0.0
        assert face.motion_mean is None


class TestComposite:
    def test_composite_mask(self):
        flow = np.full((2, 2), 0.8)
        assert np.allclose(composite_mask(flow), 0.8)
        assert np.allclose(composite_mask(flow, np.ones((2, 2))), 0.0)
        assert np.allclose(composite_mask(flow, np.full((2, 2), 0.5)), 0.5)

    def test_zero_mask_returns_sharp(self):
        sharp = Frame(pixels=np.random.default_rng(1).random((8, 10, 3)).astype(np.float32))
        result = composite_final(sharp, np.ones((4, 5, 3)), np.zeros((4, 5)))
        assert np.array_equal(result.pixels, sharp.pixels)

    def test_full_mask_returns_blur(self):
        sharp = Frame(pixels=np.zeros((9, 11, 3), dtype=np.float32))
        result = composite_final(sharp, np.full((5, 6, 3), 0.5), np.ones((5, 6)))
        assert np.allclose(result.pixels, 0.5)

    def test_dimension_checks(self):
        sharp = Frame(pixels=np.zeros((8, 10, 3), dtype=np.float32))
        with pytest.raises(ValueError):
            composite_final(sharp, np.zeros((4, 5, 3)), np.zeros((3, 5)))
        with pytest.raises(ValueError):
            composite_final(sharp, np.zeros((3, 5, 3)), np.zeros((3, 5)))

    def test_odd_size_follows_pixel_centres(self):
        sharp = Frame(pixels=np.zeros((7, 9, 3), dtype=np.float32))
        ramp = np.broadcast_to(np.arange(5, dtype=np.float32)[None, :, None], (4, 5, 3))
        result = composite_final(sharp, ramp, np.ones((4, 5)))
        expected = np.clip((np.arange(9) - 0.5) / 2.0, 0.0, 4.0)
        assert result.pixels.shape == (7, 9, 3)
        assert np.allclose(result.pixels[0, :, 0], expected, atol=1e-6)
        assert np.allclose(result.pixels[6, :, 2], expected, atol=1e-6)
