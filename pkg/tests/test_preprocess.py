import logging

import numpy as np
import pytest
from scipy import ndimage

from hsidense.errors import ParameterError
from hsidense.hsi import AnnotatedRegion, HyperspectralCube, Label
from hsidense.phantom import PhantomSpec, generate_phantom
from hsidense.preprocess import (
    Patch, PatchSet, PreprocessConfig, align_bands, apply_mnf, augment, decode_patches, encode_patches,
    estimate_shifts, extract_patches, fit_mnf, preprocess_cube, specular_gate, spectral_summary,
)
from hsidense.preprocess.align import shift_plane

from oracles import cubic_generalized_eigen

WL3 = [400.0, 410.0, 420.0]


def smooth_field(rng, shape, sigma=3.0):
    f = ndimage.gaussian_filter(rng.standard_normal(shape), sigma)
    return f / f.std()


def rank_one_cube(seed, bands=8, size=64, noise=0.05):
    """Spatially smooth single-component signal plus white noise, kept positive."""
    rng = np.random.default_rng(seed)
    spectrum = 0.5 + 0.4 * np.sin(np.linspace(0, 3, bands))
    amplitude = 1.0 + 0.15 * smooth_field(rng, (size, size), 4.0)
    clean = spectrum[:, None, None] * amplitude[None]
    noisy = clean + noise * rng.standard_normal(clean.shape)
    wl = 400.0 + 10.0 * np.arange(bands)
    return clean, HyperspectralCube(noisy.astype(np.float32), wl)


def rect_region(shape, r0, c0, h, w, label=Label.TUMOR, rid="R"):
    m = np.zeros(shape, bool)
    m[r0:r0 + h, c0:c0 + w] = True
    return AnnotatedRegion(m, label, rid)


class TestAlignment:
    @pytest.fixture
    def textured(self):
        rng = np.random.default_rng(3)
        base = 0.5 + 0.1 * smooth_field(rng, (64, 64), 2.0)
        data = np.stack([base * (1.0 + 0.05 * b) for b in range(4)])
        return HyperspectralCube(data.astype(np.float32), [400.0, 410.0, 420.0, 430.0])

    def test_aligned_cube_gives_zero_shifts(self, textured):
        assert not estimate_shifts(textured).any()

    def test_recovers_known_shift(self, textured):
        data = textured.data.copy()
        data[2] = shift_plane(data[2], 3, -2)
        shifts = estimate_shifts(textured.with_data(data))
        assert tuple(shifts[2]) == (-3, 2)
        assert not shifts[[0, 1, 3]].any()

    def test_idempotent(self, textured):
        data = textured.data.copy()
        data[1] = shift_plane(data[1], -4, 5)
        data[3] = shift_plane(data[3], 2, 2)
        once = align_bands(textured.with_data(data))
        twice = align_bands(once)
        assert once == twice

    def test_degenerate_band_skipped_with_warning(self, textured, caplog):
        data = textured.data.copy()
        data[1] = 0.5
        with caplog.at_level(logging.WARNING):
            shifts = estimate_shifts(textured.with_data(data))
        assert not shifts[1].any()
        assert "degenerate" in caplog.text

    def test_single_band_rejected(self):
        with pytest.raises(ParameterError):
            estimate_shifts(HyperspectralCube(np.ones((1, 8, 8)), [400.0]))


class TestMnf:
    def test_small_cube_against_independent_eigensolver(self):
        rng = np.random.default_rng(17)
        data = rng.random((3, 4, 4)).astype(np.float32).astype(np.float64)
        cube = HyperspectralCube(data, WL3)
        model = fit_mnf(cube)

        # covariances by explicit summation (sample convention, divisor n - 1)
        pix = [data[:, r, c] for r in range(4) for c in range(4)]
        mu = sum(pix) / len(pix)
        sigma = sum(np.outer(p - mu, p - mu) for p in pix) / (len(pix) - 1)
        diffs = [data[:, r, c] - data[:, r, c + 1] for r in range(4) for c in range(3)]
        dmu = sum(diffs) / len(diffs)
        noise = 0.5 * sum(np.outer(d - dmu, d - dmu) for d in diffs) / (len(diffs) - 1)
        assert np.abs(model.data_covariance - sigma).max() < 1e-12
        assert np.abs(model.noise_covariance - noise).max() < 1e-12

        pairs = cubic_generalized_eigen(sigma.tolist(), noise.tolist())
        for i, (lam, vec) in enumerate(pairs):
            assert abs(model.eigenvalues[i] - lam) < 1e-8 * max(1.0, abs(lam))
            v = model.forward_basis[:, i]
            v = v if v[np.argmax(np.abs(v))] > 0 else -v
            assert np.abs(v - vec).max() < 1e-8
            residual = sigma @ model.forward_basis[:, i] - model.eigenvalues[i] * noise @ model.forward_basis[:, i]
            assert np.abs(residual).max() < 1e-8

    def test_invariants(self):
        _, cube = rank_one_cube(1)
        model = fit_mnf(cube)
        assert np.all(np.diff(model.eigenvalues) <= 0)
        eye = np.eye(cube.bands)
        assert np.abs(model.forward_basis @ model.inverse_basis - eye).max() < 1e-8
        res = model.data_covariance @ model.forward_basis - model.noise_covariance @ model.forward_basis * model.eigenvalues
        assert np.abs(res).max() < 1e-8

    def test_white_noise_gives_unit_snr(self):
        rng = np.random.default_rng(2)
        cube = HyperspectralCube(0.5 + 0.05 * rng.standard_normal((6, 200, 200)), 400.0 + 10 * np.arange(6))
        model = fit_mnf(cube)
        assert np.abs(model.eigenvalues - 1.0).max() < 0.05

    def test_rank_one_signal(self):
        _, cube = rank_one_cube(4)
        model = fit_mnf(cube)
        assert model.eigenvalues[0] > 20.0
        assert np.abs(model.eigenvalues[1:] - 1.0).max() < 0.15
        assert model.retained_components == 1

    def test_k_equals_b_is_identity(self):
        _, cube = rank_one_cube(5)
        model = fit_mnf(cube)
        out = apply_mnf(cube, model, k=cube.bands)
        assert np.abs(out.data.astype(np.float64) - cube.data).max() < 1e-6  # float32 storage
        from hsidense.preprocess.mnf import denoise_pixels
        px = cube.pixels().astype(np.float64)
        assert np.abs(denoise_pixels(px, model, cube.bands) - px).max() < 1e-8

    def test_k1_denoising_reduces_mse(self):
        clean, cube = rank_one_cube(6)
        model = fit_mnf(cube)
        out = apply_mnf(cube, model, k=1)
        mse_in = np.mean((cube.data - clean) ** 2)
        mse_out = np.mean((out.data - clean) ** 2)
        assert mse_out < mse_in
        assert out.bands == cube.bands

    @pytest.mark.parametrize("k", [0, 9, -1])
    def test_k_out_of_range(self, k):
        _, cube = rank_one_cube(7)
        model = fit_mnf(cube)
        with pytest.raises(ParameterError):
            apply_mnf(cube, model, k=k)

    def test_too_few_pixels(self):
        with pytest.raises(ParameterError):
            fit_mnf(HyperspectralCube(np.random.default_rng(0).random((3, 1, 3)), WL3))

    def test_singular_noise_adds_ridge(self):
        rng = np.random.default_rng(8)
        base = rng.random((1, 10, 10))
        cube = HyperspectralCube(np.concatenate([base, base, 2 * base]), WL3)
        model = fit_mnf(cube)
        assert model.ridge > 0
        assert np.all(np.isfinite(model.eigenvalues))


class TestExtraction:
    @pytest.fixture
    def cube(self):
        return HyperspectralCube(np.random.default_rng(0).random((3, 100, 100)), WL3, "P9")

    def test_exact_fit_gives_one_patch(self, cube):
        ps = extract_patches(cube, rect_region((100, 100), 10, 20, 32, 32))
        assert len(ps) == 1
        assert ps[0].origin == (10, 20)
        np.testing.assert_array_equal(ps[0].data, cube.data[:, 10:42, 20:52].transpose(1, 2, 0))

    def test_64_square_gives_3x3_grid(self, cube):
        ps = extract_patches(cube, rect_region((100, 100), 5, 5, 64, 64), stride=16, size=32)
        assert [p.origin for p in ps] == [(5 + 16 * i, 5 + 16 * j) for i in range(3) for j in range(3)]

    def test_too_small_region_warns(self, cube, caplog):
        with caplog.at_level(logging.WARNING):
            ps = extract_patches(cube, rect_region((100, 100), 0, 0, 20, 20))
        assert len(ps) == 0
        assert "no 32x32 window" in caplog.text

    @pytest.mark.parametrize("h,w,stride", [(40, 70, 16), (32, 90, 8), (96, 33, 16), (50, 50, 5)])
    def test_rectangle_count_formula(self, cube, h, w, stride):
        ps = extract_patches(cube, rect_region((100, 100), 1, 2, h, w), stride=stride)
        assert len(ps) == ((h - 32) // stride + 1) * ((w - 32) // stride + 1)

    def test_training_mode_uses_source_size(self, cube):
        ps = extract_patches(cube, rect_region((100, 100), 0, 0, 52, 52), mode="training", stride=8)
        assert len(ps) == 9
        assert all(p.data.shape == (36, 36, 3) for p in ps)

    def test_footprints_inside_phantom_mask(self):
        cube, regions = generate_phantom(PhantomSpec(seed=2))
        for region in regions:
            ps = extract_patches(cube, region)
            assert len(ps) >= 1
            for p in ps:
                r, c = p.origin
                assert region.mask[r:r + 32, c:c + 32].all()
                assert p.region_id == region.region_id and p.label == region.label
                assert p.patient_id == cube.patient_id


class TestSpecularGate:
    def test_saturated_rejected(self):
        assert specular_gate(np.ones((32, 32, 30))) is False

    def test_dark_kept(self):
        assert specular_gate(np.zeros((32, 32, 30))) is True

    def test_three_percent_rejected(self):
        patch = np.zeros((10, 10, 4))
        patch.reshape(100, 4)[[5, 50, 77], 2] = 0.95
        assert specular_gate(patch) is False

    def test_two_percent_kept(self):
        patch = np.zeros((10, 10, 4))
        patch.reshape(100, 4)[[5, 50], 0] = 1.0
        assert specular_gate(patch) is True

    def test_monotone(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            patch = rng.uniform(0.8, 1.0, (8, 8, 3))
            brighter = np.maximum(patch, patch + rng.uniform(0, 0.1, patch.shape) * (rng.random(patch.shape) < 0.2))
            if not specular_gate(patch):
                assert not specular_gate(brighter)

    def test_threshold_range(self):
        with pytest.raises(ParameterError):
            specular_gate(np.zeros((4, 4, 2)), threshold=0.0)


class TestSpectralSummary:
    def test_constant_spectrum(self):
        out = spectral_summary(np.full((2, 2, 30), 5.0))
        np.testing.assert_array_equal(out[..., 0], 5.0)
        np.testing.assert_array_equal(out[..., 1], 0.0)

    def test_shape(self):
        assert spectral_summary(np.zeros((32, 32, 30))).shape == (32, 32, 2)

    def test_two_pass_oracle(self):
        x = np.random.default_rng(9).random((32, 32, 30))
        out = spectral_summary(x)
        for r, c in [(0, 0), (5, 17), (31, 31), (12, 3)]:
            vals = x[r, c].tolist()
            m = sum(vals) / len(vals)
            sd = (sum((v - m) ** 2 for v in vals) / len(vals)) ** 0.5
            assert abs(out[r, c, 0] - m) < 1e-12
            assert abs(out[r, c, 1] - sd) < 1e-12

    def test_commutes_with_flips(self):
        x = np.random.default_rng(10).random((8, 8, 5))
        for flip in (lambda a: a[::-1], lambda a: a[:, ::-1]):
            np.testing.assert_array_equal(spectral_summary(flip(x)), flip(spectral_summary(x)))

    def test_needs_two_bands(self):
        with pytest.raises(ParameterError):
            spectral_summary(np.zeros((2, 2, 1)))


class TestAugment:
    @pytest.fixture
    def source(self):
        return np.random.default_rng(11).random((36, 36, 5))

    def test_forced_corner_no_flip(self, source):
        out = augment(source, None, offset=(0, 0), flips=(False, False))
        np.testing.assert_array_equal(out, source[:32, :32])

    def test_double_horizontal_flip_is_identity(self, source):
        once = augment(source, None, offset=(2, 3), flips=(False, True))
        twice = augment(np.pad(once, ((0, 1), (0, 1), (0, 0))), None, offset=(0, 0), flips=(False, True))
        np.testing.assert_array_equal(twice, source[2:34, 3:35])

    def test_offset_frequencies(self, source):
        rng = np.random.default_rng(12)
        marker = np.arange(36 * 36, dtype=np.float64).reshape(36, 36, 1)
        counts = np.zeros((5, 5))
        for _ in range(10_000):
            out = augment(marker, rng, flips=(False, False))
            r, c = divmod(int(out[0, 0, 0]), 36)
            counts[r, c] += 1
        freq = counts / counts.sum()
        assert np.abs(freq - 0.04).max() < 0.01

    def test_flip_rates(self):
        rng = np.random.default_rng(13)
        src = np.arange(33 * 33, dtype=np.float64).reshape(33, 33, 1)
        v = h = 0
        for _ in range(4000):
            out = augment(src, rng, offset=(0, 0))
            v += out[0, 0, 0] >= 31 * 33
            h += out[0, 0, 0] % 33 == 31
        assert abs(v / 4000 - 0.5) < 0.04 and abs(h / 4000 - 0.5) < 0.04

    def test_patch_metadata_preserved(self, source):
        p = Patch(source, Label.HEALTHY, "R1", "P1", (4, 6))
        out = augment(p, np.random.default_rng(0))
        assert (out.label, out.region_id, out.patient_id) == (Label.HEALTHY, "R1", "P1")
        assert out.data.shape == (32, 32, 5)

    def test_bands_never_permuted(self, source):
        rng = np.random.default_rng(14)
        for _ in range(20):
            out = augment(source, rng)
            means = out.reshape(-1, 5)
            # every output pixel appears in the source with bands in the same order
            assert any(np.array_equal(means[0], px) for px in source.reshape(-1, 5))

    def test_source_must_be_larger(self):
        with pytest.raises(ParameterError):
            augment(np.zeros((32, 32, 2)), np.random.default_rng(0))


class TestPatchContainer:
    def test_round_trip(self):
        rng = np.random.default_rng(15)
        ps = PatchSet([Patch(rng.random((4, 4, 3)).astype(np.float32), Label(i % 2), f"R{i}", "P", (i, 2 * i))
                       for i in range(3)])
        back, wl = decode_patches(encode_patches(ps, WL3))
        np.testing.assert_array_equal(wl, np.float32(WL3))
        for a, b in zip(ps, back):
            assert a.data.tobytes() == b.data.tobytes()
            assert (a.label, a.region_id, a.patient_id, a.origin) == (b.label, b.region_id, b.patient_id, b.origin)

    def test_empty_round_trip(self):
        back, _ = decode_patches(encode_patches(PatchSet(), WL3))
        assert len(back) == 0


class TestPipeline:
    def test_phantom_cube(self):
        cube, regions = generate_phantom(PhantomSpec(seed=21, noise_sigma=0.05))
        prepared = preprocess_cube(cube, regions, PreprocessConfig())
        assert set(prepared.region_labels) == {r.region_id for r in regions}
        assert prepared.mnf_components >= 1
        for rid, crops in prepared.ordered.items():
            assert crops and all(c.data.shape == (32, 32, 30) for c in crops)
            assert all(specular_gate(c) for c in crops)
        assert len(prepared.training) > 0
        assert {p.label for p in prepared.training} == {Label.TUMOR, Label.HEALTHY}
        assert all(p.data.shape == (36, 36, 30) for p in prepared.training)
