import asyncio
import json
import os

import cv2
import numpy as np
import pytest

from burst_io import (
    Frame,
    build_pyramid,
    decode_image,
    downsample,
    encode_png,
    linear_to_srgb,
    load_burst,
    load_manifest,
    soft_gamma,
    srgb_to_linear,
    write_png,
)
from models import BurstManifest


def _write_manifest(directory, **fields) -> str:
    path = os.path.join(directory, "manifest.json")
    with open(path, "w") as handle:
        json.dump(fields, handle)
    return path


def _write_gray_png(path: str, value: int, shape=(16, 24)) -> None:
    cv2.imwrite(path, np.full(shape + (3,), value, dtype=np.uint8))


class TestTransferCurves:
    def test_srgb_pair_inverts(self):
        values = np.linspace(0.0, 1.0, 101)
        assert np.max(np.abs(srgb_to_linear(linear_to_srgb(values)) - values)) < 1e-9

    def test_srgb_known_values(self):
        assert srgb_to_linear(0.0) == 0.0
        assert srgb_to_linear(1.0) == pytest.approx(1.0)
        assert linear_to_srgb(0.18) == pytest.approx(0.4614, abs=1e-3)

    def test_soft_gamma_round_trip(self):
        values = np.linspace(0.0, 1.0, 257)
        assert np.max(np.abs(soft_gamma(soft_gamma(values, 3.0), 1.0 / 3.0) - values)) <= 1e-9

    def test_soft_gamma_values(self):
        assert soft_gamma(0.5, 3.0) == pytest.approx(0.25)
        assert soft_gamma(0.0) == 0.0
        assert soft_gamma(1.0) == 1.0
        assert soft_gamma(0.5, 1.0) == pytest.approx(0.5)

    def test_soft_gamma_rejects_non_positive_k(self):
        with pytest.raises(ValueError):
            soft_gamma(0.5, 0.0)


class TestCodec:
    def test_eight_bit_png_decodes_to_linear(self):
        pixels = np.full((4, 5, 3), 0.2, dtype=np.float32)
        decoded = decode_image(encode_png(pixels, 8))
        assert decoded.shape == (4, 5, 3)
        assert decoded.dtype == np.float32
        assert np.max(np.abs(decoded - 0.2)) < 5e-3

    def test_sixteen_bit_png_is_stored_linear(self):
        pixels = np.random.default_rng(0).random((6, 7, 3))
        decoded = decode_image(encode_png(pixels, 16))
        assert np.max(np.abs(decoded - pixels)) < 1e-4

    def test_channel_order_is_rgb(self):
        pixels = np.zeros((2, 2, 3))
        pixels[..., 0] = 1.0
        decoded = decode_image(encode_png(pixels, 8))
        assert decoded[..., 0].min() > 0.99
        assert decoded[..., 2].max() == 0.0

    def test_undecodable_bytes(self):
        with pytest.raises(ValueError):
            decode_image(b"not an image")

    def test_bad_bit_depth(self):
        with pytest.raises(ValueError):
            encode_png(np.zeros((2, 2, 3)), 12)


class TestManifest:
    def test_base_defaults_to_last_frame(self, tmp_path):
        for i in range(3):
            _write_gray_png(str(tmp_path / f"f{i}.png"), 100)
        path = _write_manifest(str(tmp_path), frame_paths=["f0.png", "f1.png", "f2.png"])
        manifest = asyncio.run(load_manifest(path))
        assert manifest.base_index == 2
        assert manifest.frame_rate_hz == 30.0
        assert manifest.frame_paths[0] == os.path.join(str(tmp_path), "f0.png")

    def test_rejects_out_of_range_base(self):
        with pytest.raises(ValueError):
            BurstManifest(frame_paths=["a.png", "b.png"], base_index=2)

    def test_rejects_single_frame(self):
        with pytest.raises(ValueError):
            BurstManifest(frame_paths=["a.png"])

    def test_rejects_non_positive_rate(self):
        with pytest.raises(ValueError):
            BurstManifest(frame_paths=["a.png", "b.png"], frame_rate_hz=0)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            asyncio.run(load_manifest(str(tmp_path / "nope.json")))


class TestLoadBurst:
    def test_frames_in_order_with_timestamps(self, tmp_path):
        for i, value in enumerate((10, 120, 250)):
            _write_gray_png(str(tmp_path / f"f{i}.png"), value)
        path = _write_manifest(str(tmp_path), frame_paths=["f0.png", "f1.png", "f2.png"], frame_rate_hz=10.0)
        frames = asyncio.run(load_burst(asyncio.run(load_manifest(path))))
        assert [frame.index for frame in frames] == [0, 1, 2]
        assert [frame.timestamp_s for frame in frames] == pytest.approx([0.0, 0.1, 0.2])
        means = [float(frame.pixels.mean()) for frame in frames]
        assert means[0] < means[1] < means[2]
        assert means[1] == pytest.approx(float(srgb_to_linear(120 / 255.0)), abs=1e-6)

    def test_missing_frame(self, tmp_path):
        _write_gray_png(str(tmp_path / "f0.png"), 10)
        path = _write_manifest(str(tmp_path), frame_paths=["f0.png", "gone.png"])
        with pytest.raises(FileNotFoundError):
            asyncio.run(load_burst(asyncio.run(load_manifest(path))))

    def test_dimension_mismatch(self, tmp_path):
        _write_gray_png(str(tmp_path / "f0.png"), 10, (16, 24))
        _write_gray_png(str(tmp_path / "f1.png"), 10, (16, 32))
        path = _write_manifest(str(tmp_path), frame_paths=["f0.png", "f1.png"])
        with pytest.raises(ValueError):
            asyncio.run(load_burst(asyncio.run(load_manifest(path))))

    def test_write_png_then_load(self, tmp_path):
        pixels = np.full((8, 8, 3), 0.5, dtype=np.float32)
        path = asyncio.run(write_png(str(tmp_path / "out" / "x.png"), pixels))
        assert os.path.isfile(path)


class TestPyramid:
    def test_level_sizes(self):
        frame = Frame(pixels=np.zeros((64, 96, 3), dtype=np.float32))
        pyramid = build_pyramid(frame)
        assert pyramid["half"].pixels.shape == (32, 48, 3)
        assert pyramid["low"].pixels.shape == (8, 12, 3)
        assert pyramid["half"].level == "half"
        assert pyramid["low"].level == "low"

    def test_uneven_sizes_round_up(self):
        frame = Frame(pixels=np.ones((17, 30, 3), dtype=np.float32))
        low = downsample(frame, 8)
        assert low.pixels.shape == (3, 4, 3)
        assert np.allclose(low.pixels, 1.0)

    def test_box_filter_averages(self):
        pixels = np.zeros((2, 2, 3), dtype=np.float32)
        pixels[0, 0] = 1.0
        assert downsample(Frame(pixels=pixels), 2).pixels[0, 0, 0] == pytest.approx(0.25)
