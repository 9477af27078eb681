import logging
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from degree_sr.imaging import (
    AUGMENT_NAMES,
    ImageBuffer,
    PatchSet,
    augment,
    bicubic_resize,
    build_patchset,
    degrade,
    extract_patches,
    list_images,
    load_patchset,
    luminance,
    read_image,
    resize_weights,
    rgb_to_ycbcr,
    save_patchset,
    sobel_edges,
    sobel_xy,
    write_image,
    ycbcr_to_rgb,
)
from degree_sr.synthetic import synthetic_image, synthetic_rgb


def keys(t, a=-0.5):
    """Closed-form Keys cubic convolution kernel."""
    t = abs(t)
    if t <= 1:
        return (a + 2) * t**3 - (a + 3) * t**2 + 1
    if t < 2:
        return a * t**3 - 5 * a * t**2 + 8 * a * t - 4 * a
    return 0.0


def brute_resize(img, scale):
    """Per-pixel 2-D evaluation of the antialiased bicubic resampler."""
    h, w = img.shape
    oh, ow = int(np.ceil(h * scale - 1e-9)), int(np.ceil(w * scale - 1e-9))
    support = 2.0 / scale if scale < 1 else 2.0
    kern = (lambda t: scale * keys(scale * t)) if scale < 1 else keys

    def mirror(i, n):
        i = i % (2 * n)
        return i if i < n else 2 * n - 1 - i

    def taps(x_out, n):
        u = (x_out + 1) / scale + 0.5 * (1 - 1 / scale) - 1  # 0-based source coordinate
        lo, hi = int(np.floor(u - support)), int(np.ceil(u + support))
        ws = [(mirror(j, n), kern(u - j)) for j in range(lo, hi + 1)]
        tot = sum(wt for _, wt in ws)
        return [(j, wt / tot) for j, wt in ws]

    out = np.zeros((oh, ow))
    for i in range(oh):
        rt = taps(i, h)
        for j in range(ow):
            ct = taps(j, w)
            out[i, j] = sum(wr * wc * img[r, c] for r, wr in rt for c, wc in ct)
    return np.clip(out, 0, 1)


class TestColor:
    def test_white(self):
        y = rgb_to_ycbcr(np.ones((1, 1, 3)))
        assert y[0, 0, 0] == pytest.approx(235 / 255, abs=1e-12)
        assert y[0, 0, 1] == pytest.approx(128 / 255, abs=1e-12)
        assert y[0, 0, 2] == pytest.approx(128 / 255, abs=1e-12)

    def test_black(self):
        assert rgb_to_ycbcr(np.zeros((1, 1, 3)))[0, 0, 0] == pytest.approx(16 / 255, abs=1e-12)

    def test_round_trip(self):
        rgb = np.random.default_rng(0).random((16, 12, 3))
        assert np.abs(ycbcr_to_rgb(rgb_to_ycbcr(rgb)) - rgb).max() < 1e-3

    def test_buffer_tags(self):
        img = ImageBuffer(np.random.default_rng(0).random((4, 4, 3)), "rgb")
        ycc = rgb_to_ycbcr(img)
        assert ycc.colorspace == "ycbcr"
        assert ycbcr_to_rgb(ycc).colorspace == "rgb"
        assert luminance(img).colorspace == "luminance"

    def test_wrong_channel_count(self):
        with pytest.raises(ValueError):
            rgb_to_ycbcr(np.zeros((4, 4)))

    def test_quantized_luminance_on_8bit_grid(self):
        y = luminance(np.random.default_rng(0).random((5, 5, 3)), quantize=True)
        np.testing.assert_allclose(y * 255, np.round(y * 255), atol=1e-9)


class TestBicubic:
    def test_scale_one_exact(self):
        img = np.random.default_rng(0).random((7, 9))
        assert np.array_equal(bicubic_resize(img, 1), img)

    @pytest.mark.parametrize("scale", [2, 3, 4, Fraction(1, 2), Fraction(1, 3), Fraction(1, 4), 0.7])
    def test_constant_preserved(self, scale):
        out = bicubic_resize(np.full((24, 18), 0.37), scale)
        np.testing.assert_allclose(out, 0.37, atol=1e-6)

    @pytest.mark.parametrize("n_in,scale", [(12, 2), (30, Fraction(1, 3)), (17, 0.6), (9, 4)])
    def test_weights_sum_to_one(self, n_in, scale):
        n_out = int(np.ceil(n_in * float(scale) - 1e-9))
        w, idx = resize_weights(n_in, n_out, scale)
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)
        assert idx.min() >= 0 and idx.max() < n_in

    def test_impulse_upscale_matches_keys_kernel(self):
        row = np.full((1, 12), 0.5)
        row[0, 6] = 0.75
        out = bicubic_resize(row, 2)
        assert out.shape == (2, 24)
        # Output pixel x (0-based) sits at source position (x + 0.5) / 2 - 0.5.
        for x in range(6, 20):
            offset = (x + 0.5) / 2 - 0.5 - 6
            assert abs(offset) % 0.5 == pytest.approx(0.25)
            expected = 0.5 + 0.25 * keys(offset)
            assert out[0, x] == pytest.approx(expected, abs=1e-12), offset

    @pytest.mark.parametrize("scale", [Fraction(1, 3), Fraction(1, 2), 2, 3])
    def test_matches_bruteforce_oracle(self, scale):
        img = np.random.default_rng(3).random((12, 9))
        np.testing.assert_allclose(bicubic_resize(img, scale), brute_resize(img, float(scale)), atol=1e-12)

    def test_reproduces_linear_ramp_interior(self):
        yy, xx = np.mgrid[0:40, 0:40]
        ramp = (0.2 + 0.01 * xx + 0.005 * yy).astype(float)
        up = bicubic_resize(ramp, 2)
        oy, ox = np.mgrid[0:80, 0:80]
        sy, sx = (oy + 0.5) / 2 - 0.5, (ox + 0.5) / 2 - 0.5
        expected = 0.2 + 0.01 * sx + 0.005 * sy
        np.testing.assert_allclose(up[8:-8, 8:-8], expected[8:-8, 8:-8], atol=1e-12)

    def test_output_clamped(self):
        img = np.zeros((10, 10))
        img[:, 5:] = 1.0
        out = bicubic_resize(img, 3)
        assert out.min() >= 0 and out.max() <= 1

    def test_color_image(self):
        rgb = np.random.default_rng(0).random((6, 8, 3))
        out = bicubic_resize(rgb, 2)
        assert out.shape == (12, 16, 3)
        np.testing.assert_allclose(out[..., 1], bicubic_resize(rgb[..., 1], 2), atol=1e-15)

    def test_degenerate_size(self):
        with pytest.raises(ValueError):
            bicubic_resize(np.zeros((4, 4)), out_shape=(0, 3))


class TestDegrade:
    def test_constant(self):
        lr, up = degrade(np.full((30, 30), 0.6), 3)
        assert lr.shape == (10, 10)
        np.testing.assert_allclose(up, 0.6, atol=1e-6)

    def test_scale_one_identity(self):
        img = np.random.default_rng(0).random((11, 13))
        lr, up = degrade(img, 1)
        assert np.array_equal(up, img) and np.array_equal(lr, img)

    def test_crops_to_multiple(self):
        lr, up = degrade(np.random.default_rng(0).random((31, 35)), 3)
        assert lr.shape == (10, 11) and up.shape == (30, 33)

    def test_buffer_in_buffer_out(self):
        lr, up = degrade(ImageBuffer(np.full((12, 12), 0.5)), 2)
        assert isinstance(lr, ImageBuffer) and isinstance(up, ImageBuffer)


class TestSobel:
    def test_constant_zero(self):
        assert not sobel_edges(np.full((8, 8), 0.3)).any()

    def test_vertical_step(self):
        img = np.zeros((6, 8))
        img[:, 4:] = 1.0
        e = sobel_edges(img)
        assert e.shape == (4, 6, 8)
        # Hand convolution: columns 3 and 4 see (1 + 2 + 1) - 0 = 4, elsewhere 0.
        expected = np.zeros((6, 8))
        expected[:, 3:5] = 4.0
        np.testing.assert_array_equal(e[2], expected)
        assert not e[0].any() and not e[1].any() and not e[3].any()

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_signed_reconstruction_exact(self, seed):
        img = np.random.default_rng(seed).random((7, 6))
        gy, gx = sobel_xy(img)
        e = sobel_edges(img)
        assert (e >= 0).all()
        assert np.array_equal(e[0] - e[1], gy)
        assert np.array_equal(e[2] - e[3], gx)

    def test_batched(self):
        imgs = np.random.default_rng(0).random((3, 5, 5))
        e = sobel_edges(imgs)
        assert e.shape == (3, 4, 5, 5)
        np.testing.assert_array_equal(e[1], sobel_edges(imgs[1]))

    def test_multichannel_rejected(self):
        with pytest.raises(ValueError):
            sobel_edges(ImageBuffer(np.zeros((4, 4, 3)), "rgb"))


class TestAugment:
    def test_count_and_names(self):
        assert len(augment(np.zeros((3, 3)))) == 16 == len(AUGMENT_NAMES)

    def test_constant(self):
        outs = augment(np.full((4, 5), 0.2))
        assert all(o.shape in ((4, 5), (5, 4)) and (o == 0.2).all() for o in outs)

    def test_rotation_cycle(self):
        img = np.arange(6.0).reshape(2, 3)
        outs = augment(img)
        for f in range(4):
            for r in range(4):
                nxt = outs[4 * f + (r + 1) % 4]
                assert np.array_equal(np.rot90(outs[4 * f + r], -1), nxt)
        # Four clockwise quarter turns give back the identity member.
        x = outs[0]
        for _ in range(4):
            x = np.rot90(x, -1)
        assert np.array_equal(x, img)

    def test_dihedral_distinct_count(self):
        pattern = np.arange(6.0).reshape(2, 3)
        # Independent enumeration of D4: 4 rotations of the pattern and of its transpose.
        d4 = {np.rot90(m, k).tobytes() + bytes(np.rot90(m, k).shape) for m in (pattern, pattern.T) for k in range(4)}
        assert len(d4) == 8
        got = {o.tobytes() + bytes(o.shape) for o in augment(pattern)}
        assert got == d4


class TestPatches:
    def test_single_patch(self):
        ps = extract_patches(synthetic_image(33, 33, np.random.default_rng(0)), 3, 33, 5)
        assert len(ps) == 1

    def test_window_arithmetic(self):
        ps = extract_patches(synthetic_image(47, 47, np.random.default_rng(0)), 1, 33, 14)
        assert len(ps) == ((47 - 33) // 14 + 1) ** 2 == 4
        assert sorted(map(tuple, ps.provenance[:, 2:])) == [(0, 0), (0, 14), (14, 0), (14, 14)]

    def test_stride_33_on_66(self):
        assert len(extract_patches(synthetic_image(66, 66, np.random.default_rng(0)), 3, 33, 33)) == 4

    def test_alignment_and_edges(self):
        hr = synthetic_image(60, 57, np.random.default_rng(1))
        ps = extract_patches(hr, 3, 33, 9, image_index=7, aug_index=2)
        _, up = degrade(hr, 3)
        for i in range(len(ps)):
            img, aug, y, x = ps.provenance[i]
            assert (img, aug) == (7, 2)
            np.testing.assert_array_equal(ps.hr[i, 0], hr[y : y + 33, x : x + 33].astype(np.float32))
            np.testing.assert_array_equal(ps.lr[i, 0], up[y : y + 33, x : x + 33].astype(np.float32))
            np.testing.assert_allclose(ps.lr_edges[i], sobel_edges(up[y : y + 33, x : x + 33]), atol=1e-5)
            np.testing.assert_allclose(ps.hr_edges[i], sobel_edges(hr[y : y + 33, x : x + 33]), atol=1e-5)

    def test_too_small_warns(self, caplog):
        with caplog.at_level(logging.WARNING):
            ps = extract_patches(np.zeros((20, 40)), 2, 33, 14)
        assert len(ps) == 0 and "smaller than patch" in caplog.text

    def test_build_with_augmentation(self):
        imgs = [synthetic_rgb(36, 36, np.random.default_rng(s)) for s in range(2)]
        ps = build_patchset(imgs, 3, 33, 14, augment_data=True)
        assert len(ps) == 2 * 16
        assert set(ps.provenance[:, 1]) == set(range(16))
        assert len(build_patchset(imgs, 3, 33, 14, augment_data=False)) == 2

    def test_patchset_file_round_trip(self, tmp_path):
        ps = build_patchset([synthetic_image(40, 45, np.random.default_rng(0))], 2, 17, 11, augment_data=False)
        path = tmp_path / "p.bin"
        save_patchset(ps, path)
        raw = path.read_bytes()
        assert raw[:8] == b"DGPATCH\x00"
        for mm in (False, True):
            back = load_patchset(path, mmap=mm)
            assert (back.patch, back.scale, len(back)) == (17, 2, len(ps))
            for name in ("lr", "hr", "lr_edges", "hr_edges", "provenance"):
                assert np.array_equal(getattr(back, name), getattr(ps, name))
        save_patchset(load_patchset(path), tmp_path / "q.bin")
        assert (tmp_path / "q.bin").read_bytes() == raw

    def test_patchset_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"X" * 64)
        with pytest.raises(ValueError):
            load_patchset(path)

    def test_patchset_shape_validation(self):
        z = np.zeros((2, 1, 5, 5), np.float32)
        with pytest.raises(ValueError):
            PatchSet(z, z, z, z, 5, 2)


class TestImageFiles:
    @pytest.mark.parametrize("suffix", [".png", ".ppm"])
    def test_rgb_round_trip(self, tmp_path, suffix):
        rgb = np.round(np.random.default_rng(0).random((9, 7, 3)) * 255) / 255
        write_image(tmp_path / f"a{suffix}", ImageBuffer(rgb, "rgb"))
        back = read_image(tmp_path / f"a{suffix}")
        assert back.colorspace == "rgb"
        np.testing.assert_allclose(back.data, rgb, atol=1e-12)

    @pytest.mark.parametrize("suffix", [".png", ".pgm"])
    def test_gray_round_trip(self, tmp_path, suffix):
        y = np.round(np.random.default_rng(1).random((6, 5)) * 255) / 255
        write_image(tmp_path / f"g{suffix}", y)
        back = read_image(tmp_path / f"g{suffix}")
        assert back.colorspace == "luminance"
        np.testing.assert_allclose(back.data, y, atol=1e-12)

    def test_list_images(self, tmp_path):
        for n in ("b.png", "a.pgm", "notes.txt"):
            (tmp_path / n).write_bytes(b"")
        assert [p.name for p in list_images(tmp_path)] == ["a.pgm", "b.png"]
