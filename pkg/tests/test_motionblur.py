import math

import numpy as np
import pytest

from conftest import make_texture, translate
from motionblur import (
    FlowPairField,
    HermitePath,
    KernelMap,
    accumulate_burst,
    build_spline,
    burst_flows,
    extrapolate_flow_endpoint,
    instantaneous_flow,
    predict_kernels,
    ramp_weights,
    render_pair_linear,
    sample_count,
    trail_sources,
)
from utils import DisparityOverflowError, pixel_grid


def _bilinear(image, x, y):
    height, width = image.shape
    x = min(max(x, 0.0), width - 1.0)
    y = min(max(y, 0.0), height - 1.0)
    x0, y0 = int(math.floor(x)), int(math.floor(y))
    x1, y1 = min(x0 + 1, width - 1), min(y0 + 1, height - 1)
    fx, fy = x - x0, y - y0
    top = image[y0, x0] * (1 - fx) + image[y0, x1] * fx
    bottom = image[y1, x0] * (1 - fx) + image[y1, x1] * fx
    return top * (1 - fy) + bottom * fy


def _line_oracle(image, delta, x, y):
    dx, dy = delta[y, x]
    count = int(np.clip(math.ceil(2.0 * math.hypot(dx, dy)), 2, 256))
    acc = total = 0.0
    for n in range(count):
        s = n / (count - 1)
        w = 1.0 - n / count
        acc += w * _bilinear(image, x + s * dx, y + s * dy)
        total += w
    return acc / total


def _constant(shape, value):
    field = np.zeros(shape + (2,))
    field[...] = value
    return field


class TestLineKernel:
    def test_matches_per_pixel_integral(self):
        rng = np.random.default_rng(2)
        errors = []
        for _ in range(20):
            image_a = rng.random((32, 32))
            image_b = rng.random((32, 32))
            kernel_a = KernelMap(delta=rng.uniform(-4.0, 4.0, (32, 32, 2)), weight=rng.random((32, 32)))
            kernel_b = KernelMap(delta=rng.uniform(-4.0, 4.0, (32, 32, 2)), weight=1.0 - kernel_a.weight)
            rendered = render_pair_linear(image_a, image_b, kernel_a, kernel_b)
            for y in range(32):
                for x in range(32):
                    expected = (
                        kernel_a.weight[y, x] * _line_oracle(image_a, kernel_a.delta, x, y)
                        + kernel_b.weight[y, x] * _line_oracle(image_b, kernel_b.delta, x, y)
                    )
                    errors.append(rendered[y, x] - expected)
        assert math.sqrt(np.mean(np.square(errors))) <= 1e-4

    def _impulse_pair(self, ramp):
        frame_a = np.zeros((5, 64))
        frame_b = np.zeros((5, 64))
        frame_a[:, 20] = 1.0
        frame_b[:, 40] = 1.0
        kernel_a = KernelMap(delta=_constant((5, 64), (-20.0, 0.0)), weight=np.full((5, 64), 0.5))
        kernel_b = KernelMap(delta=_constant((5, 64), (20.0, 0.0)), weight=np.full((5, 64), 0.5))
        return render_pair_linear(frame_a, frame_b, kernel_a, kernel_b, ramp=ramp)[2]

    def test_ramp_fills_the_streak(self):
        row = self._impulse_pair(ramp=True)
        assert row[20:41].min() > 0.0
        assert row.sum() == pytest.approx(1.0, abs=1e-3)

    def test_uniform_short_segments_leave_a_gap(self):
        row = self._impulse_pair(ramp=False)
        assert np.abs(row[29:32]).max() < 1e-12
        assert row[20] > 0.0 and row[40] > 0.0

    def test_shape_mismatch(self):
        kernel = KernelMap(delta=np.zeros((4, 4, 2)), weight=np.full((4, 4), 0.5))
        with pytest.raises(ValueError):
            render_pair_linear(np.zeros((4, 4)), np.zeros((4, 5)), kernel, kernel)


class TestPredictKernels:
    def test_identical_frames(self, texture):
        kernel_a, kernel_b = predict_kernels(texture, texture)
        assert np.abs(kernel_a.delta).max() < 0.1
        assert np.allclose(kernel_a.weight, 0.5, atol=1e-3)
        assert np.allclose(kernel_a.weight + kernel_b.weight, 1.0)
        assert kernel_a.clamp_fraction == 0.0

    def test_translation_direction(self):
        texture = make_texture(96, 128, seed=3, sigma=5.0)
        # frame_b(x) = frame_a(x + 10)
        frame_b = translate(texture, -10.0, 0.0)
        kernel_a, kernel_b = predict_kernels(texture, frame_b)
        interior = (slice(24, -24), slice(24, -24))
        assert np.median(kernel_a.delta[interior][..., 0]) == pytest.approx(10.0, abs=0.5)
        assert np.median(kernel_b.delta[interior][..., 0]) == pytest.approx(-10.0, abs=0.5)
        assert np.median(kernel_a.delta[interior][..., 1]) == pytest.approx(0.0, abs=0.5)

    def test_inconsistent_flow_shifts_weight(self):
        delta_a = _constant((8, 16), (3.0, 0.0))
        delta_b = _constant((8, 16), (-3.0, 0.0))
        delta_b[:, :4] = (5.0, 0.0)
        kernel_a, _ = predict_kernels(None, None, flows=(delta_a, delta_b))
        assert kernel_a.weight[4, 13] == pytest.approx(0.5)
        assert kernel_a.weight[4, 1] != pytest.approx(0.5)

    def test_kernels_cover_the_streak(self):
        frame_a = np.zeros((5, 64))
        frame_b = np.zeros((5, 64))
        frame_a[:, 20] = 1.0
        frame_b[:, 40] = 1.0
        # dense flow only moves the impulse pixels
        delta_a = np.zeros((5, 64, 2))
        delta_b = np.zeros((5, 64, 2))
        delta_a[:, 40] = (-20.0, 0.0)
        delta_b[:, 20] = (20.0, 0.0)
        kernel_a, kernel_b = predict_kernels(frame_a, frame_b, flows=(delta_a, delta_b))
        assert np.allclose(kernel_a.delta[2, 20:41], (-20.0, 0.0))
        assert np.allclose(kernel_b.delta[2, 20:41], (20.0, 0.0))
        assert np.allclose(kernel_a.weight + kernel_b.weight, 1.0)

        row = render_pair_linear(frame_a, frame_b, kernel_a, kernel_b)[2]
        assert row[20:41].min() > 0.0
        assert np.abs(row[:20]).max() < 1e-12
        assert np.abs(row[41:]).max() < 1e-12

    def test_trail_sources_follow_the_longest_path(self):
        xs, ys = pixel_grid(3, 16)
        grid = np.stack([xs, ys], axis=-1)
        step = np.zeros((3, 16, 2))
        step[1, 2] = (6.0, 0.0)
        step[1, 5] = (2.0, 0.0)
        sources = trail_sources(build_spline(grid, step, step, step))
        assert sources[1, 2:9].tolist() == [16 + 2] * 7
        assert sources[1, 9] == 16 + 9
        assert sources[0].tolist() == list(range(16))
        assert sources[2].tolist() == list(range(32, 48))

    def test_disparity_overflow(self):
        flows = (_constant((8, 8), (70.0, 0.0)), _constant((8, 8), (-70.0, 0.0)))
        with pytest.raises(DisparityOverflowError) as caught:
            predict_kernels(None, None, flows=flows)
        assert caught.value.reason == "disparity_overflow"

        kernel_a, _ = predict_kernels(None, None, max_clamp_fraction=1.0, flows=flows)
        assert np.linalg.norm(kernel_a.delta, axis=-1).max() <= 64.0 + 1e-9
        assert kernel_a.clamp_fraction == 1.0


class TestSamples:
    def test_ramp_weights(self):
        assert ramp_weights(4).tolist() == [1.0, 0.75, 0.5, 0.25]
        assert ramp_weights(3, uniform=True).tolist() == [1.0, 1.0, 1.0]
        with pytest.raises(ValueError):
            ramp_weights(0)

    def test_sample_count(self):
        assert sample_count(0.0) == 2
        assert sample_count(10.0) == 20
        assert sample_count(1000.0) == 256
        assert sample_count(np.array([0.2, 3.3])).tolist() == [2, 7]


class TestMotionPath:
    def test_instantaneous_flow(self):
        assert instantaneous_flow(np.array([4.0, 0.0]), np.array([4.0, 0.0])) == pytest.approx([4.0, 0.0])
        assert instantaneous_flow(np.array([6.0, 0.0]), np.array([2.0, 0.0])) == pytest.approx([3.0, 0.0])
        assert instantaneous_flow(np.array([4.0, 0.0]), np.array([-4.0, 0.0])) == pytest.approx([0.0, 0.0])
        assert instantaneous_flow(np.array([0.0, 0.0]), np.array([3.0, 0.0])) == pytest.approx([0.0, 0.0])

    def test_hermite_constraints(self):
        path = HermitePath(
            start=np.array([1.0, 2.0]), end=np.array([5.0, -1.0]),
            m0=np.array([3.0, 1.0]), m1=np.array([-2.0, 4.0]),
        )
        assert path.at(0.0) == pytest.approx([1.0, 2.0])
        assert path.at(1.0) == pytest.approx([5.0, -1.0])
        assert path.tangent(0.0) == pytest.approx([3.0, 1.0])
        assert path.tangent(1.0) == pytest.approx([-2.0, 4.0])

    def test_chord_tangents_give_a_line(self):
        start, step = np.array([2.0, 3.0]), np.array([4.0, 2.0])
        path = build_spline(start, step, step, step)
        for t in np.linspace(0.0, 1.0, 11):
            assert path.at(t) == pytest.approx(start + t * step)

    def test_spline_follows_a_circle(self):
        radius = 40.0
        points = [radius * np.array([math.cos(a), math.sin(a)]) for a in np.radians([0.0, 45.0, 90.0, 135.0])]
        tangent_1 = instantaneous_flow(points[2] - points[1], points[1] - points[0])
        tangent_2 = instantaneous_flow(points[3] - points[2], points[2] - points[1])
        path = build_spline(points[1], points[2] - points[1], tangent_1, tangent_2)
        deviation = max(abs(np.linalg.norm(path.at(t)) - radius) for t in np.linspace(0.0, 1.0, 101))
        sagitta = radius * (1.0 - math.cos(math.radians(22.5)))
        assert sagitta == pytest.approx(3.04, abs=0.01)
        assert deviation < 1.0

    def test_extrapolated_endpoint(self):
        assert extrapolate_flow_endpoint([0.0, 0.0], [1.0, 0.0], [2.0, 0.0]) == pytest.approx([3.0, 0.0])
        assert extrapolate_flow_endpoint([0.0, 0.0], [1.0, 1.0], [1.0, 1.0]) == pytest.approx([1.0, 1.0])
        assert extrapolate_flow_endpoint([-10.0, 0.0], [0.0, 0.0], [1.0, 0.0]) == pytest.approx([2.0, 0.0])

    def test_extrapolation_stays_on_a_circle(self):
        radius = 40.0
        a, b, c, d = (radius * np.array([math.cos(t), math.sin(t)]) for t in np.radians([45.0, 90.0, 135.0, 180.0]))
        assert extrapolate_flow_endpoint(a, b, c) == pytest.approx(d, abs=1e-9)

    def test_burst_flows_extrapolate_ends(self):
        shape = (6, 8)
        forward = [_constant(shape, (2.0, 0.0))] * 2
        backward = [_constant(shape, (-2.0, 0.0))] * 2
        fields = burst_flows([None] * 3, forward, backward)
        assert len(fields) == 3
        for field in fields:
            assert np.allclose(field.forward, (2.0, 0.0))
            assert np.allclose(field.backward, (2.0, 0.0))
        with pytest.raises(ValueError):
            burst_flows([None] * 3, forward[:1], backward)


class TestAccumulate:
    def _still_flows(self, shape, count):
        return [FlowPairField(forward=np.zeros(shape + (2,)), backward=np.zeros(shape + (2,))) for _ in range(count)]

    def test_static_burst_is_unchanged(self):
        image = make_texture(16, 20, seed=4)
        blurred = accumulate_burst([image] * 3, self._still_flows((16, 20), 3))
        assert blurred.shape == image.shape
        assert np.abs(blurred - image).max() < 1e-4

    def test_flat_image_stays_flat(self):
        image = np.full((16, 20, 3), 0.3)
        flows = burst_flows([image] * 3, [_constant((16, 20), (3.0, 1.0))] * 2, [_constant((16, 20), (-3.0, -1.0))] * 2)
        for interpolation in ("spline", "linear"):
            blurred = accumulate_burst([image] * 3, flows, interpolation=interpolation)
            assert np.abs(blurred - 0.3).max() < 1e-3

    def test_soft_gamma_keeps_highlights(self):
        frame_a = np.full((24, 64, 3), 0.05)
        frame_b = np.full((24, 64, 3), 0.05)
        frame_a[10:13, 19:22] = 1.0
        frame_b[10:13, 39:42] = 1.0
        flows = burst_flows(
            [frame_a, frame_b], [_constant((24, 64), (20.0, 0.0))], [_constant((24, 64), (-20.0, 0.0))]
        )
        soft = accumulate_burst([frame_a, frame_b], flows, colorspace="soft_gamma")
        linear = accumulate_burst([frame_a, frame_b], flows, colorspace="linear")
        assert np.all(soft >= linear - 1e-5)
        assert soft[11, 30, 0] > linear[11, 30, 0] + 0.01
        assert linear[11, 30, 0] > 0.05 + 1e-3

    def test_needs_matching_flows(self):
        image = np.zeros((4, 4, 3))
        with pytest.raises(ValueError):
            accumulate_burst([image], [])
        with pytest.raises(ValueError):
            accumulate_burst([image, image], self._still_flows((4, 4), 3))

    def _block_burst(self, corners, shape, size=1):
        """Bright size x size block at each (x, y) corner, with dense flow moving only the block."""
        images, forward, backward = [], [], []
        for x, y in corners:
            image = np.full(shape + (3,), 0.05)
            image[y:y + size, x:x + size] = 1.0
            images.append(image)
        for (x0, y0), (x1, y1) in zip(corners[:-1], corners[1:]):
            outgoing = np.zeros(shape + (2,))
            outgoing[y0:y0 + size, x0:x0 + size] = (x1 - x0, y1 - y0)
            returning = np.zeros(shape + (2,))
            returning[y1:y1 + size, x1:x1 + size] = (x0 - x1, y0 - y1)
            forward.append(outgoing)
            backward.append(returning)
        return images, burst_flows(images, forward, backward)

    def _oracle_curve(self, corners, fields):
        """Densely sampled spline through the block corners, built from the flow at the block."""
        deltas = [instantaneous_flow(field.forward, field.backward) for field in fields]
        points = []
        for i, ((x0, y0), (x1, y1)) in enumerate(zip(corners[:-1], corners[1:])):
            path = build_spline(np.array([x0, y0], dtype=float), fields[i].forward[y0, x0],
                                deltas[i][y0, x0], deltas[i + 1][y1, x1])
            points.extend(path.at(t) for t in np.linspace(0.0, 1.0, 2001))
        return np.array(points)

    @staticmethod
    def _bright_pixels(blurred, background=0.05):
        rows, cols = np.nonzero(blurred[..., 0] > background + 1e-3)
        return np.stack([cols, rows], axis=1).astype(np.float64)

    def test_moving_block_leaves_a_contiguous_trail(self):
        corners = [(10, 6), (22, 6), (34, 6)]
        images, fields = self._block_burst(corners, (16, 64), size=4)
        blurred = accumulate_burst(images, fields, colorspace="linear")
        assert blurred[7, 12:36, 0].min() > 0.1
        assert np.abs(blurred[0, :, 0] - 0.05).max() < 1e-6
        assert np.abs(blurred[7, 45:, 0] - 0.05).max() < 1e-6

    def test_curved_trail_follows_the_spline(self):
        corners = [(16, 40), (36, 40), (36, 20)]
        images, fields = self._block_burst(corners, (64, 64))
        blurred = accumulate_burst(images, fields, colorspace="linear")
        curve = self._oracle_curve(corners, fields)
        bright = self._bright_pixels(blurred)
        assert len(bright) > 20

        distance = np.linalg.norm(bright[:, None, :] - curve[None, :, :], axis=-1).min(axis=1)
        assert distance.max() <= 1.0
        nearest = np.linalg.norm(curve[::20, None, :] - bright[None, :, :], axis=-1).min(axis=1)
        assert np.mean(nearest <= 1.0) > 0.9

    def test_spline_trail_stays_closer_to_the_arc(self):
        centre, radius = np.array([56.0, 8.0]), 40.0
        corners = [
            tuple(int(v) for v in np.rint(centre + radius * np.array([math.cos(a), math.sin(a)])))
            for a in np.radians([0.0, 45.0, 90.0, 135.0])
        ]
        images, fields = self._block_burst(corners, (64, 112))

        def deviation(interpolation):
            blurred = accumulate_burst(images, fields, colorspace="linear", interpolation=interpolation)
            bright = self._bright_pixels(blurred)
            return float(np.mean(np.abs(np.linalg.norm(bright - centre, axis=1) - radius)))

        spline, linear = deviation("spline"), deviation("linear")
        assert spline < linear
        assert spline < 1.0

    def test_doubling_samples_converges(self):
        frames = [make_texture(24, 32, seed=s, sigma=5.0) for s in (1, 2, 3)]
        flows = burst_flows(
            frames,
            [_constant((24, 32), (4.0, 0.0)), _constant((24, 32), (0.0, 4.0))],
            [_constant((24, 32), (-4.0, 0.0)), _constant((24, 32), (0.0, -4.0))],
        )
        coarse = accumulate_burst(frames, flows, samples=32)
        fine = accumulate_burst(frames, flows, samples=64)
        assert math.sqrt(float(np.mean(np.square(coarse - fine)))) < 1e-3
