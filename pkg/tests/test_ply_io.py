"""Splat PLY and PNG round trips."""

import numpy as np
import pytest

from contrast_forge.errors import ContractError
from contrast_forge.ply_io import (
    PLY_PROPERTIES,
    load_png,
    load_splat_ply,
    save_png,
    save_splat_ply,
)
from contrast_forge.splat_render import GaussianCloud


def random_cloud(n=64, seed=0):
    rng = np.random.default_rng(seed)
    return GaussianCloud(
        positions=rng.standard_normal((n, 3)).astype(np.float32),
        log_scales=rng.uniform(-5, 0, (n, 3)).astype(np.float32),
        rotations=rng.standard_normal((n, 4)).astype(np.float32),
        colors=rng.uniform(0, 1, (n, 3)).astype(np.float32),
        opacities=rng.uniform(-4, 4, n).astype(np.float32),
    )


class TestPlyRoundTrip:
    def test_bit_exact_for_float32(self, tmp_path):
        cloud = random_cloud()
        path = tmp_path / "cloud.ply"
        save_splat_ply(cloud, path)
        loaded = load_splat_ply(path)
        for field in ("positions", "log_scales", "rotations",
                      "colors", "opacities"):
            a = getattr(cloud, field)
            b = getattr(loaded, field)
            assert b.dtype == np.float32
            np.testing.assert_array_equal(
                a.view(np.uint32), b.view(np.uint32)
            )

    def test_identical_bytes_on_rewrite(self, tmp_path):
        cloud = random_cloud(seed=3)
        p1, p2 = tmp_path / "a.ply", tmp_path / "b.ply"
        save_splat_ply(cloud, p1)
        save_splat_ply(cloud, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_header_declares_expected_layout(self, tmp_path):
        path = tmp_path / "cloud.ply"
        save_splat_ply(random_cloud(n=5), path)
        header = path.read_bytes().split(b"end_header")[0].decode()
        assert "format binary_little_endian 1.0" in header
        assert "element vertex 5" in header
        for prop in PLY_PROPERTIES:
            assert f"property float {prop}" in header

    def test_empty_cloud(self, tmp_path):
        path = tmp_path / "empty.ply"
        save_splat_ply(GaussianCloud.empty(), path)
        assert len(load_splat_ply(path)) == 0

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "cloud.ply"
        save_splat_ply(random_cloud(), path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 16])
        with pytest.raises(ContractError, match="truncated"):
            load_splat_ply(path)

    def test_non_ply_rejected(self, tmp_path):
        path = tmp_path / "junk.ply"
        path.write_bytes(b"OBJ\nend_header\n")
        with pytest.raises(ContractError):
            load_splat_ply(path)


class TestPng:
    def test_round_trip_within_quantization(self, tmp_path):
        rng = np.random.default_rng(1)
        img = rng.uniform(0, 1, (24, 32, 3))
        path = tmp_path / "img.png"
        save_png(path, img)
        back = load_png(path)
        assert back.shape == img.shape
        assert np.abs(back - img).max() <= (0.5 / 255.0) + 1e-9

    def test_values_clipped(self, tmp_path):
        img = np.array([[[2.0, -1.0, 0.5]]])
        path = tmp_path / "clip.png"
        save_png(path, img)
        back = load_png(path)
        np.testing.assert_allclose(back[0, 0], [1.0, 0.0, 0.5],
                                   atol=0.5 / 255.0)

    def test_bad_shape_rejected(self, tmp_path):
        with pytest.raises(ContractError):
            save_png(tmp_path / "bad.png", np.zeros((4, 4)))
