import numpy as np
import pytest

from segkit.imaging import (
    hsv_to_rgb,
    photometric_adjust,
    read_png,
    resample_image,
    rgb_to_hsv,
    write_png,
)

from oracles import bilinear_pixel, rgb_to_hsv_scalar


@pytest.fixture
def image(rng):
    return rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)


def px(*rgb):
    return np.array([[rgb]], dtype=np.uint8)


class TestHsv:
    @pytest.mark.parametrize(
        "rgb, hsv",
        [((255, 0, 0), (0.0, 1.0, 255.0)), ((128, 128, 128), (0.0, 0.0, 128.0)), ((0, 255, 0), (120.0, 1.0, 255.0))],
    )
    def test_examples(self, rgb, hsv):
        assert tuple(rgb_to_hsv(np.array(rgb))) == pytest.approx(hsv)
        assert rgb_to_hsv_scalar(*rgb) == pytest.approx(hsv)

    def test_agrees_with_scalar_oracle(self, image):
        got = rgb_to_hsv(image)
        for r in range(16):
            for c in range(16):
                assert tuple(got[r, c]) == pytest.approx(rgb_to_hsv_scalar(*image[r, c].astype(float)))

    def test_roundtrip(self, image):
        back = np.floor(hsv_to_rgb(rgb_to_hsv(image)) + 0.5)
        assert np.array_equal(back, image)


class TestPhotometric:
    @pytest.mark.parametrize("op, neutral", [("brightness", 0), ("contrast", 1.0), ("saturation", 1.0), ("hue", 0.0)])
    def test_neutral_is_identity(self, image, op, neutral):
        assert photometric_adjust(image, op, neutral).tobytes() == image.tobytes()

    def test_brightness_clamps(self):
        assert photometric_adjust(px(240, 240, 240), "brightness", 32).tolist() == [[[255, 255, 255]]]

    def test_hue_red_to_green(self):
        assert photometric_adjust(px(255, 0, 0), "hue", 120).tolist() == [[[0, 255, 0]]]

    def test_rounding_half_up(self):
        # 3 * 0.5 = 1.5 rounds to 2, 5 * 0.5 = 2.5 rounds to 3
        assert photometric_adjust(px(3, 5, 1), "contrast", 0.5).tolist() == [[[2, 3, 1]]]

    def test_brightness_composes(self, rng):
        img = rng.integers(40, 200, (8, 8, 3), dtype=np.uint8)
        two = photometric_adjust(photometric_adjust(img, "brightness", 17), "brightness", -30)
        assert np.array_equal(two, photometric_adjust(img, "brightness", -13))

    def test_saturation_keeps_value(self, image):
        for f in (0.0, 0.5, 1.7):
            out = photometric_adjust(image, "saturation", f)
            assert np.array_equal(out.max(axis=-1), image.max(axis=-1))

    def test_hue_keeps_s_and_v(self, image):
        before = rgb_to_hsv(image)
        for d in (-18.0, 7.5, 120.0):
            after = rgb_to_hsv(photometric_adjust(image, "hue", d))
            assert np.abs(after[..., 2] - before[..., 2]).max() <= 1
            # one 8-bit step moves S by at most 1/V; compare through channel values
            back = np.floor(hsv_to_rgb(np.stack([before[..., 0], after[..., 1], after[..., 2]], -1)) + 0.5)
            assert np.abs(back - image.astype(float)).max() <= 1


class TestResample:
    def test_resize_same_size(self, image):
        assert resample_image(image, "resize", (16, 16)).tobytes() == image.tobytes()

    def test_hflip_involution(self, image):
        assert resample_image(resample_image(image, "hflip"), "hflip").tobytes() == image.tobytes()

    def test_1x2_to_1x4(self):
        img = np.array([[(0, 0, 0), (200, 100, 0)]], dtype=np.uint8)
        expected = [[[round(v) for v in bilinear_pixel(img, 1, 4, 0, j)] for j in range(4)]]
        assert expected == [[[0, 0, 0], [50, 25, 0], [150, 75, 0], [200, 100, 0]]]
        assert resample_image(img, "resize", (1, 4)).tolist() == expected

    def test_resize_matches_oracle_within_rounding(self, rng):
        img = rng.integers(0, 256, (5, 7, 3), dtype=np.uint8)
        out = resample_image(img, "resize", (9, 4))
        for i in range(9):
            for j in range(4):
                ref = np.floor(bilinear_pixel(img, 9, 4, i, j) + 0.5)
                assert np.abs(out[i, j] - ref).max() <= 1

    def test_pad_default_fill(self, image):
        out = resample_image(image, "pad", (20, 18))
        assert out.shape == (20, 18, 3)
        assert (out[16:] == 114).all() and (out[:, 16:] == 114).all()
        assert np.array_equal(out[:16, :16], image)

    def test_pad_custom_fill(self, image):
        out = resample_image(image, "pad", (17, 16), fill=(1, 2, 3))
        assert out[16].tolist() == [[1, 2, 3]] * 16

    def test_crop(self, image):
        assert np.array_equal(resample_image(image, "crop", (2, 3, 4, 5)), image[3:8, 2:6])


def test_png_roundtrip(tmp_path, image):
    write_png(image, tmp_path / "a.png")
    assert np.array_equal(read_png(tmp_path / "a.png"), image)
