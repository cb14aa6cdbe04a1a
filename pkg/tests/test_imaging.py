import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image as PILImage

from oracles import dense_operator, gaussian_blur_matrix
from sl0sr.errors import FormatError
from sl0sr.imaging import (
    DegradationConfig,
    as_image,
    bicubic_resize,
    blur_adjoint,
    center_crop_to_multiple,
    decimate,
    degrade,
    degrade_adjoint,
    gaussian_blur,
    gaussian_kernel,
    read_image,
    read_pgm,
    to_luminance,
    write_image,
    write_pgm,
    zero_insert,
)

unit_images = arrays(
    np.float64,
    st.tuples(st.integers(1, 12), st.integers(1, 12)),
    elements=st.floats(0.0, 1.0),
)


def random_image(seed, shape):
    return np.random.default_rng(seed).random(shape)


# --- configuration --------------------------------------------------------

def test_degradation_defaults():
    c = DegradationConfig()
    assert (c.scale, c.blur_sigma, c.radius) == (2, 0.8, 3)
    assert DegradationConfig(blur_sigma=1.5).radius == math.ceil(4.5)
    assert DegradationConfig(blur_radius=1).radius == 1


@pytest.mark.parametrize("kwargs", [{"scale": 0}, {"scale": 1.5}, {"blur_sigma": -0.1},
                                    {"blur_radius": -1}])
def test_degradation_rejects_invalid(kwargs):
    with pytest.raises(ValueError):
        DegradationConfig(**kwargs)


@given(sigma=st.floats(0.05, 10.0), radius=st.integers(1, 40))
def test_kernel_sums_to_one(sigma, radius):
    k = gaussian_kernel(sigma, radius)
    assert abs(k.sum() - 1.0) <= 1e-12
    np.testing.assert_array_equal(k, k[::-1])


def test_as_image_validation():
    with pytest.raises(ValueError):
        as_image(np.zeros(4))
    with pytest.raises(ValueError):
        as_image(np.array([[np.nan]]))
    np.testing.assert_array_equal(as_image([[-1.0, 2.0]], clamp=True), [[0.0, 1.0]])


# --- PGM ------------------------------------------------------------------

class TestPgm:
    def test_reads_scaled_bytes(self, tmp_path):
        path = tmp_path / "a.pgm"
        path.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 128, 255, 64]))
        img = read_pgm(path)
        np.testing.assert_array_equal(img, [[0.0, 128 / 255], [1.0, 64 / 255]])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 9), st.integers(1, 9), st.data())
    def test_round_trip_is_byte_identical(self, tmp_path_factory, w, h, data):
        payload = data.draw(st.binary(min_size=w * h, max_size=w * h))
        src = tmp_path_factory.mktemp("pgm") / "src.pgm"
        dst = src.with_name("dst.pgm")
        src.write_bytes(b"P5\n%d %d\n255\n" % (w, h) + payload)
        write_pgm(read_pgm(src), dst)
        assert dst.read_bytes() == src.read_bytes()

    def test_header_comments_and_spacing(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5 # made by hand\n3\t1 # width height\n255 " + bytes([1, 2, 3]))
        np.testing.assert_array_equal(read_pgm(path), [[1 / 255, 2 / 255, 3 / 255]])
        out = tmp_path / "out.pgm"
        write_pgm(read_pgm(path), out)
        assert out.read_bytes() == b"P5\n3 1\n255\n" + bytes([1, 2, 3])

    def test_write_rounds_to_nearest(self, tmp_path):
        path = tmp_path / "r.pgm"
        write_pgm(np.array([[0.0, 0.5, 1.0, 0.2 / 255, 0.6 / 255]]), path)
        assert path.read_bytes().endswith(bytes([0, 128, 255, 0, 1]))

    @pytest.mark.parametrize("content, match", [
        (b"P2\n2 1\n255\n0 1\n", "P2"),
        (b"XX\n2 1\n255\n\x00\x01", "magic"),
        (b"P5\n2 1\n65535\n\x00\x01\x00\x01", "maxval"),
        (b"P5\n2 2\n255\n\x00\x01", "truncated"),
        (b"P5\n2", "truncated"),
    ])
    def test_format_errors(self, tmp_path, content, match):
        path = tmp_path / "bad.pgm"
        path.write_bytes(content)
        with pytest.raises(FormatError, match=match):
            read_pgm(path)

    def test_read_image_dispatches_pgm(self, tmp_path):
        path = tmp_path / "x.pgm"
        path.write_bytes(b"P5\n1 1\n255\n\x80")
        assert read_image(path)[0, 0] == 128 / 255


class TestPng:
    def test_pixel_round_trip(self, tmp_path):
        img = np.rint(random_image(0, (7, 5)) * 255) / 255
        path = tmp_path / "x.png"
        write_image(img, path)
        np.testing.assert_array_equal(read_image(path), img)

    def test_color_is_reduced_to_luminance(self, tmp_path):
        rgb = np.array([[[255, 0, 0], [0, 255, 0], [0, 0, 255], [10, 20, 30]]], dtype=np.uint8)
        path = tmp_path / "c.png"
        PILImage.fromarray(rgb, mode="RGB").save(path)
        expected = (0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]) / 255
        np.testing.assert_allclose(read_image(path), expected, atol=1e-12)
        np.testing.assert_allclose(to_luminance(rgb / 255.0), expected, atol=1e-12)

    def test_sixteen_bit_is_rejected(self, tmp_path):
        path = tmp_path / "w.png"
        PILImage.fromarray(np.full((2, 2), 40000, dtype=np.uint16)).save(path)
        with pytest.raises(FormatError):
            read_image(path)

    def test_garbage_is_a_format_error(self, tmp_path):
        path = tmp_path / "g.png"
        path.write_bytes(b"not an image at all")
        with pytest.raises(FormatError):
            read_image(path)


# --- bicubic --------------------------------------------------------------

class TestBicubic:
    def test_constant_stays_constant(self):
        out = bicubic_resize(np.full((5, 7), 0.3), 13, 11)
        assert out.shape == (11, 13)
        np.testing.assert_allclose(out, 0.3, atol=1e-15)

    def test_identity_resize(self):
        img = random_image(1, (6, 9))
        np.testing.assert_allclose(bicubic_resize(img, 9, 6), img, atol=1e-12)

    def test_hand_evaluated_half_pixel_weights(self):
        # Keys kernel (a = -0.5) at distances 1.5, 0.5, 0.5, 1.5:
        # a(1.5^3 - 5*1.5^2 + 8*1.5 - 4) = -1/16 and 1.5*0.5^3 - 2.5*0.5^2 + 1 = 9/16.
        w = np.array([-1 / 16, 9 / 16, 9 / 16, -1 / 16])
        f = (np.arange(8.0) ** 2) / 100.0
        out = bicubic_resize(f[None, :], 16, 1)[0]
        for i in range(1, 6):
            assert out[2 * i + 1] == pytest.approx(w @ f[i - 1:i + 3], abs=1e-15)
            assert out[2 * i] == pytest.approx(f[i], abs=1e-15)

    def test_ramp_midpoints_are_linear(self):
        ramp = np.linspace(0.1, 0.8, 8)[None, :]
        out = bicubic_resize(ramp, 16, 1)[0]
        for i in range(1, 6):
            assert out[2 * i + 1] == pytest.approx(0.5 * (ramp[0, i] + ramp[0, i + 1]), abs=1e-14)

    @given(unit_images, st.integers(1, 20), st.integers(1, 20))
    def test_output_in_unit_range(self, img, w, h):
        out = bicubic_resize(img, w, h)
        assert out.shape == (h, w)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_rejects_bad_size(self):
        with pytest.raises(ValueError):
            bicubic_resize(np.zeros((2, 2)), 0, 3)


# --- blur -----------------------------------------------------------------

class TestBlur:
    def test_zero_sigma_is_identity(self):
        img = random_image(2, (6, 6))
        np.testing.assert_array_equal(gaussian_blur(img, DegradationConfig(blur_sigma=0.0)), img)

    def test_constant_preserved(self):
        out = gaussian_blur(np.full((9, 8), 0.45))
        np.testing.assert_allclose(out, 0.45, atol=1e-15)

    def test_impulse_response_is_kernel_outer_product(self):
        img = np.zeros((21, 21))
        img[10, 10] = 1.0
        sigma = 0.8
        d = np.arange(-3, 4)
        g = np.exp(-d ** 2 / (2 * sigma ** 2))
        g /= g.sum()
        out = gaussian_blur(img)
        np.testing.assert_allclose(out[7:14, 7:14], np.outer(g, g), atol=1e-15)
        assert np.all(out[:7] == 0) and np.all(out[14:] == 0)

    def test_matches_dense_clamp_operator(self):
        img = random_image(3, (9, 11))
        Mr = gaussian_blur_matrix(9, 0.8, 3)
        Mc = gaussian_blur_matrix(11, 0.8, 3)
        np.testing.assert_allclose(gaussian_blur(img, clamp=False), Mr @ img @ Mc.T, atol=1e-14)

    def test_adjoint_matches_dense_transpose_including_borders(self):
        img = np.random.default_rng(4).normal(size=(9, 11))
        Mr = gaussian_blur_matrix(9, 0.8, 3)
        Mc = gaussian_blur_matrix(11, 0.8, 3)
        np.testing.assert_allclose(blur_adjoint(img), Mr.T @ img @ Mc, atol=1e-14)

    def test_adjoint_on_images_narrower_than_kernel(self):
        img = np.random.default_rng(5).normal(size=(2, 3))
        M2 = gaussian_blur_matrix(2, 0.8, 3)
        M3 = gaussian_blur_matrix(3, 0.8, 3)
        np.testing.assert_allclose(blur_adjoint(img), M2.T @ img @ M3, atol=1e-14)


# --- decimation and degradation --------------------------------------------

class TestDecimate:
    def test_scale_one_identity(self):
        img = random_image(6, (3, 5))
        np.testing.assert_array_equal(decimate(img, 1), img)

    def test_top_left_samples(self):
        img = np.arange(16.0).reshape(4, 4)
        np.testing.assert_array_equal(decimate(img, 2), [[0.0, 2.0], [8.0, 10.0]])

    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
                  elements=st.floats(-5, 5)), st.integers(1, 4))
    def test_decimate_inverts_zero_insert(self, y, s):
        np.testing.assert_array_equal(decimate(zero_insert(y, s), s), y)

    def test_non_divisible_rejected(self):
        with pytest.raises(ValueError, match="divisible"):
            decimate(np.zeros((5, 4)), 2)


class TestDegrade:
    def test_constant(self):
        out = degrade(np.full((8, 6), 0.7))
        assert out.shape == (4, 3)
        np.testing.assert_allclose(out, 0.7, atol=1e-15)

    def test_no_blur_is_pure_decimation(self):
        img = random_image(7, (6, 8))
        np.testing.assert_array_equal(degrade(img, DegradationConfig(blur_sigma=0.0)), img[::2, ::2])

    def test_impulse_gives_decimated_kernel_taps(self):
        img = np.zeros((20, 20))
        img[10, 10] = 1.0
        g = gaussian_kernel(0.8, 3)  # taps for offsets -3..3
        out = degrade(img)
        # LR pixel (i, j) samples HR (2i, 2j); offsets from the impulse are 2i - 10.
        for i in range(10):
            for j in range(10):
                di, dj = 10 - 2 * i, 10 - 2 * j
                want = g[di + 3] * g[dj + 3] if abs(di) <= 3 and abs(dj) <= 3 else 0.0
                assert out[i, j] == pytest.approx(want, abs=1e-16)

    @given(st.integers(1, 6).map(lambda k: 2 * k), st.integers(1, 6).map(lambda k: 2 * k),
           st.data())
    @settings(deadline=None)
    def test_output_in_unit_range(self, h, w, data):
        img = data.draw(arrays(np.float64, (h, w), elements=st.floats(0.0, 1.0)))
        out = degrade(img)
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestDegradeAdjoint:
    def test_inner_product_identity_on_border_free_vectors(self):
        config = DegradationConfig()
        rng = np.random.default_rng(8)
        for _ in range(50):
            u = np.zeros((32, 32))
            u[6:-6, 6:-6] = rng.normal(size=(20, 20))
            v = np.zeros((16, 16))
            v[3:-3, 3:-3] = rng.normal(size=(10, 10))
            lhs = np.sum(degrade(u, config, clamp=False) * v)
            rhs = np.sum(u * degrade_adjoint(v, u.shape, config))
            assert abs(lhs - rhs) <= 1e-8 * max(abs(lhs), abs(rhs), 1e-300)

    def test_inner_product_identity_everywhere(self):
        # The adjoint folds the clamped border taps, so no border-free
        # restriction is needed.
        rng = np.random.default_rng(9)
        for shape in [(8, 8), (10, 6), (4, 12)]:
            u = rng.normal(size=shape)
            v = rng.normal(size=(shape[0] // 2, shape[1] // 2))
            lhs = np.sum(degrade(u, clamp=False) * v)
            rhs = np.sum(u * degrade_adjoint(v, shape))
            assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_matches_dense_transpose(self):
        A = dense_operator(lambda x: degrade(x, clamp=False), (6, 8))
        At = dense_operator(lambda y: degrade_adjoint(y, (6, 8)), (3, 4))
        np.testing.assert_allclose(At, A.T, atol=1e-15)

    def test_zero_in_zero_out(self):
        assert np.array_equal(degrade_adjoint(np.zeros((3, 4)), (6, 8)), np.zeros((6, 8)))

    def test_scale_one_no_blur_identity(self):
        y = np.random.default_rng(10).normal(size=(4, 5))
        config = DegradationConfig(scale=1, blur_sigma=0.0)
        np.testing.assert_array_equal(degrade_adjoint(y, (4, 5), config), y)

    def test_not_clamped(self):
        out = degrade_adjoint(-np.ones((3, 3)), (6, 6))
        assert out.min() < 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            degrade_adjoint(np.zeros((3, 3)), (7, 6))


def test_center_crop_to_multiple():
    img = np.arange(7 * 10.0).reshape(7, 10)
    out, margins = center_crop_to_multiple(img, 4)
    assert out.shape == (4, 8)
    assert margins == (1, 2, 1, 1)
    np.testing.assert_array_equal(out, img[1:5, 1:9])
    same, none = center_crop_to_multiple(img[:6], 2)
    assert same.shape == (6, 10) and none == (0, 0, 0, 0)
