import math

import numpy as np
import pytest
from PIL import Image

from lowlight.errors import (
    DecodeError,
    ImageWriteError,
    InvalidInputError,
    NotFoundError,
)
from lowlight.imaging import (
    ExposurePair,
    apply_exposure,
    augment,
    discover_pairs,
    load_image,
    load_pair,
    resize,
    rotate_reflect,
    sample_augment_params,
    save_image,
    synth_second_exposure,
    validate_image,
    _interp_axis,
)


def write_png(path, array_hw3):
    Image.fromarray(array_hw3.astype(np.uint8)).save(path)


class TestLoadImage:
    def test_8bit_scaling(self, tmp_path):
        arr = np.zeros((16, 16, 3), dtype=np.uint8)
        arr[0, 0] = 255
        arr[0, 1] = 128
        write_png(tmp_path / "a.png", arr)
        img = load_image(tmp_path / "a.png")
        assert img.shape == (3, 16, 16)
        assert img[0, 0, 0] == 1.0
        # hand division oracle: 128/255
        assert img[0, 0, 1] == pytest.approx(128 / 255, abs=1e-9)
        assert img[0, 1, 1] == 0.0

    def test_16bit_scaling(self, tmp_path):
        arr = np.zeros((16, 16), dtype=np.uint16)
        arr[0, 0] = 65535
        arr[0, 1] = 32768
        Image.fromarray(arr, mode="I;16").save(tmp_path / "a.png")
        img = load_image(tmp_path / "a.png")
        assert img.shape == (3, 16, 16)
        assert img[0, 0, 0] == 1.0
        assert img[0, 0, 1] == pytest.approx(32768 / 65535, abs=1e-7)

    def test_grayscale_replicated(self, tmp_path):
        arr = (np.arange(256).reshape(16, 16) % 200).astype(np.uint8)
        Image.fromarray(arr, mode="L").save(tmp_path / "g.png")
        img = load_image(tmp_path / "g.png")
        assert img.shape == (3, 16, 16)
        assert np.array_equal(img[0], img[1]) and np.array_equal(img[1], img[2])

    def test_missing_file(self, tmp_path):
        with pytest.raises(NotFoundError):
            load_image(tmp_path / "nope.png")

    def test_undecodable_bytes(self, tmp_path):
        bad = tmp_path / "bad.png"
        bad.write_bytes(b"definitely not an image")
        with pytest.raises(DecodeError):
            load_image(bad)

    def test_too_small_image(self, tmp_path):
        write_png(tmp_path / "tiny.png", np.zeros((4, 4, 3), dtype=np.uint8))
        with pytest.raises(InvalidInputError):
            load_image(tmp_path / "tiny.png")


class TestSaveImage:
    def test_round_trip_zeros_and_ones(self, tmp_path):
        for value in (0.0, 1.0):
            img = np.full((3, 16, 16), value, dtype=np.float32)
            save_image(img, tmp_path / "x.png")
            back = load_image(tmp_path / "x.png")
            assert np.array_equal(back, img)

    def test_round_trip_uniform_half(self, tmp_path):
        img = np.full((3, 16, 16), 0.5, dtype=np.float32)
        save_image(img, tmp_path / "x.png")
        back = load_image(tmp_path / "x.png")
        # quantization oracle: round(0.5 * 255) / 255
        expected = round(0.5 * 255) / 255
        assert np.allclose(back, expected, atol=1e-9)

    def test_round_trip_random_within_one_level(self, tmp_path):
        rng = np.random.default_rng(3)
        img = rng.uniform(0, 1, size=(3, 24, 24)).astype(np.float32)
        save_image(img, tmp_path / "x.png")
        back = load_image(tmp_path / "x.png")
        assert np.max(np.abs(back - img)) <= 1.0 / 255 + 1e-9

    def test_unwritable_path(self, tmp_path):
        img = np.zeros((3, 16, 16), dtype=np.float32)
        with pytest.raises(ImageWriteError):
            save_image(img, tmp_path / "no" / "such" / "dir" / "x.png")

    def test_single_channel(self, tmp_path):
        img = np.full((1, 16, 16), 0.25, dtype=np.float32)
        save_image(img, tmp_path / "m.png")
        back = load_image(tmp_path / "m.png")
        assert back.shape == (3, 16, 16)
        assert np.allclose(back, round(0.25 * 255) / 255, atol=1e-9)


def bilinear_oracle(img, h, w):
    """Loop implementation of endpoint-aligned bilinear resampling."""
    c, h_in, w_in = img.shape
    out = np.zeros((c, h, w))
    for yo in range(h):
        y = yo * (h_in - 1) / (h - 1) if h > 1 else 0.0
        y0, fy = int(math.floor(y)), y - math.floor(y)
        y1 = min(y0 + 1, h_in - 1)
        for xo in range(w):
            x = xo * (w_in - 1) / (w - 1) if w > 1 else 0.0
            x0, fx = int(math.floor(x)), x - math.floor(x)
            x1 = min(x0 + 1, w_in - 1)
            top = img[:, y0, x0] * (1 - fx) + img[:, y0, x1] * fx
            bot = img[:, y1, x0] * (1 - fx) + img[:, y1, x1] * fx
            out[:, yo, xo] = top * (1 - fy) + bot * fy
    return out


class TestResize:
    def test_identity_when_sizes_match(self):
        img = np.random.default_rng(0).uniform(0, 1, (3, 12, 12)).astype(np.float32)
        assert np.array_equal(resize(img, 12, 12), img)

    def test_constant_stays_constant(self):
        img = np.full((3, 16, 16), 0.3, dtype=np.float32)
        out = resize(img, 32, 24)
        assert out.shape == (3, 32, 24)
        assert np.allclose(out, 0.3, atol=1e-6)

    def test_axis_interpolation_hand_case(self):
        # interpolating [0, 1] onto 4 endpoint-aligned samples
        row = np.array([[[0.0, 1.0]]])
        out = _interp_axis(row, 2, 4)
        assert np.allclose(out[0, 0], [0.0, 1 / 3, 2 / 3, 1.0], atol=1e-12)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        img = rng.uniform(0, 1, (3, 9, 14)).astype(np.float32)
        out = resize(img, 13, 10)
        assert np.allclose(out, bilinear_oracle(img, 13, 10), atol=1e-5)

    def test_range_and_errors(self):
        img = np.random.default_rng(2).uniform(0, 1, (3, 10, 10)).astype(np.float32)
        out = resize(img, 21, 33)
        assert out.min() >= 0.0 and out.max() <= 1.0
        with pytest.raises(InvalidInputError):
            resize(img, 4, 10)


def rotation_oracle(img, angle_deg):
    """Inverse-mapping bilinear rotation about the center (interior only)."""
    c, h, w = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rad = math.radians(angle_deg)
    cos, sin = math.cos(rad), math.sin(rad)
    out = np.full((c, h, w), np.nan)
    for y in range(h):
        for x in range(w):
            dy, dx = y - cy, x - cx
            sy = cy + cos * dy + sin * dx
            sx = cx - sin * dy + cos * dx
            if 0 <= sy <= h - 1 and 0 <= sx <= w - 1:
                y0, x0 = int(math.floor(sy)), int(math.floor(sx))
                y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
                fy, fx = sy - y0, sx - x0
                top = img[:, y0, x0] * (1 - fx) + img[:, y0, x1] * fx
                bot = img[:, y1, x0] * (1 - fx) + img[:, y1, x1] * fx
                out[:, y, x] = top * (1 - fy) + bot * fy
    return out


class TestAugment:
    def _pair(self, scale_b=0.5, seed=0):
        rng = np.random.default_rng(seed)
        low_a = rng.uniform(0.05, 0.45, size=(3, 32, 32)).astype(np.float32)
        low_b = (low_a * scale_b).astype(np.float32)
        return ExposurePair(low_a=low_a, low_b=low_b, scene_id="s")

    def test_deterministic(self):
        pair = self._pair()
        out1 = augment(pair, seed=42)
        out2 = augment(pair, seed=42)
        assert np.array_equal(out1.low_a, out2.low_a)
        assert np.array_equal(out1.low_b, out2.low_b)

    def test_rotation_angle_bounded(self):
        angles = [sample_augment_params(s).angle_deg for s in range(200)]
        assert all(abs(a) <= 15.0 for a in angles)
        assert max(abs(a) for a in angles) > 5.0  # the range is actually used

    def test_gains_bounded(self):
        for s in range(100):
            p = sample_augment_params(s)
            assert 0.9 <= p.gain_a <= 1.1 and 0.9 <= p.gain_b <= 1.1

    def test_rotation_matches_independent_oracle(self):
        rng = np.random.default_rng(5)
        img = rng.uniform(0, 1, (1, 33, 33)).astype(np.float32)
        angle = 9.25
        got = rotate_reflect(img, angle)
        want = rotation_oracle(img, angle)
        # compare only where the oracle sampled inside the image
        inside = ~np.isnan(want)
        margin = 8  # keep well clear of reflected borders
        got_c = got[:, margin:-margin, margin:-margin]
        want_c = want[:, margin:-margin, margin:-margin]
        inside_c = inside[:, margin:-margin, margin:-margin]
        assert inside_c.all()
        assert np.allclose(got_c, want_c, atol=2e-4)

    def test_same_geometry_photometric_only(self):
        # low_b is a pure gain of low_a; after shared-geometry augmentation the
        # members still differ only by a constant factor
        pair = self._pair(scale_b=0.5)
        seed = 7
        params = sample_augment_params(seed)
        out = augment(pair, seed)
        ratio = 0.5 * params.gain_b / params.gain_a
        assert np.allclose(out.low_b, ratio * out.low_a, atol=1e-5)

    def test_output_range(self):
        pair = ExposurePair(
            low_a=np.random.default_rng(0).uniform(0.8, 1.0, (3, 16, 16)).astype(np.float32),
            low_b=np.full((3, 16, 16), 0.99, dtype=np.float32),
            scene_id="x",
        )
        out = augment(pair, 3)
        for m in (out.low_a, out.low_b):
            assert m.min() >= 0.0 and m.max() <= 1.0


class TestSynthSecondExposure:
    def test_identity_parameters(self):
        img = np.random.default_rng(0).uniform(0, 1, (3, 16, 16)).astype(np.float32)
        assert np.allclose(apply_exposure(img, 1.0, 1.0), img, atol=1e-7)

    def test_pure_gain(self):
        img = np.full((3, 16, 16), 0.8, dtype=np.float32)
        assert np.allclose(apply_exposure(img, 0.5, 1.0), 0.4, atol=1e-7)

    def test_gamma_power(self):
        # hand power computation: 0.5 ** 2 = 0.25
        img = np.full((3, 16, 16), 0.5, dtype=np.float32)
        assert np.allclose(apply_exposure(img, 1.0, 2.0), 0.25, atol=1e-7)

    def test_deterministic_and_shared_shape(self):
        img = np.random.default_rng(1).uniform(0, 1, (3, 20, 20)).astype(np.float32)
        p1 = synth_second_exposure(img, 9)
        p2 = synth_second_exposure(img, 9)
        assert np.array_equal(p1.low_b, p2.low_b)
        assert p1.low_a.shape == p1.low_b.shape
        assert p1.scene_id
        assert np.array_equal(p1.low_a, img)

    def test_monotone_ordering_preserved(self):
        rng = np.random.default_rng(2)
        img = rng.uniform(0, 1, (3, 24, 24)).astype(np.float32)
        for seed in range(10):
            pair = synth_second_exposure(img, seed)
            order = np.argsort(img.ravel(), kind="stable")
            b_sorted = pair.low_b.ravel()[order]
            assert np.all(np.diff(b_sorted) >= -1e-6)


class TestPairValidationAndDiscovery:
    def test_shape_mismatch_rejected(self):
        a = np.zeros((3, 16, 16), dtype=np.float32)
        b = np.zeros((3, 16, 18), dtype=np.float32)
        with pytest.raises(InvalidInputError):
            ExposurePair(a, b, "s").validate()

    def test_empty_scene_id_rejected(self):
        a = np.zeros((3, 16, 16), dtype=np.float32)
        with pytest.raises(InvalidInputError):
            ExposurePair(a, a.copy(), "").validate()

    def test_validate_image_rejects_bad_values(self):
        bad = np.full((3, 16, 16), 1.5, dtype=np.float32)
        with pytest.raises(InvalidInputError):
            validate_image(bad)
        nan = np.full((3, 16, 16), np.nan, dtype=np.float32)
        with pytest.raises(InvalidInputError):
            validate_image(nan)

    def test_scene_layout(self, tmp_path):
        rng = np.random.default_rng(0)
        for scene in ("s1", "s2"):
            d = tmp_path / scene
            d.mkdir()
            for member in ("a.png", "b.png"):
                save_image(rng.uniform(0, 1, (3, 16, 16)).astype(np.float32), d / member)
        sources = discover_pairs(tmp_path)
        assert [s.scene_id for s in sources] == ["s1", "s2"]
        assert all(s.path_b is not None for s in sources)
        pair = load_pair(sources[0])
        assert pair.scene_id == "s1"

    def test_flat_layout_synthesizes(self, tmp_path):
        rng = np.random.default_rng(0)
        for k in range(3):
            save_image(rng.uniform(0, 1, (3, 16, 16)).astype(np.float32), tmp_path / f"i{k}.png")
        sources = discover_pairs(tmp_path)
        assert len(sources) == 3
        assert all(s.path_b is None for s in sources)
        pair = load_pair(sources[0], synth_seed=4)
        assert pair.low_a.shape == pair.low_b.shape

    def test_empty_dir(self, tmp_path):
        with pytest.raises(InvalidInputError):
            discover_pairs(tmp_path)

    def test_missing_dir(self, tmp_path):
        with pytest.raises(NotFoundError):
            discover_pairs(tmp_path / "nope")
