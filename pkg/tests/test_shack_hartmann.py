import math

import numpy as np
import pytest

from hydrolink.field import ComplexField, Grid, lg_mode
from hydrolink.shack_hartmann import (LensletArray, SlopeField, SpotImage,
                                      average_magnitudes, capture,
                                      extract_slopes, fit_aperture_radius,
                                      modal_fit, reconstruct_wavefront)
from hydrolink.zernike import (ZernikeSpectrum, nm_from_index,
                               phase_from_spectrum, sample_modal_screen)

WAVELENGTH = 532e-9

GEOMETRY = LensletArray()                    # 23x23, 150 um, 5.2 mm
GRID = Grid(512, 12.5e-6)                    # 12 field samples per lenslet
# analysis disk covering every lenslet window, shared by screen and fit
R_AP = 12 * GEOMETRY.pitch * math.sqrt(2) + 1e-6


def uniform_field(screen=None, grid=GRID):
    amp = np.ones((grid.n_samples, grid.n_samples), dtype=complex)
    if screen is not None:
        amp = amp * np.exp(1j * screen.phase)
    return ComplexField(grid, WAVELENGTH, amp)


def screen_from(coeffs, grid=GRID, r_ap=R_AP):
    return phase_from_spectrum(ZernikeSpectrum.from_dict(coeffs, r_ap), grid)


class TestGeometry:
    def test_defaults(self):
        g = LensletArray()
        assert (g.count_x, g.count_y) == (23, 23)
        assert g.pitch == pytest.approx(150e-6)
        assert g.focal_length == pytest.approx(5.2e-3)

    def test_extent(self):
        assert GEOMETRY.extent_x == pytest.approx(23 * 150e-6)

    def test_invalid(self):
        with pytest.raises(ValueError):
            LensletArray(pitch=0.0)


class TestCapture:
    def test_flat_wavefront_centered_spots(self):
        spots = capture(uniform_field(), GEOMETRY)
        slopes = extract_slopes(spots)
        disp = np.nanmax(np.abs(slopes.slope_x)) * WAVELENGTH \
            * GEOMETRY.focal_length / (2 * math.pi)
        assert disp < GEOMETRY.pixel_size / 10

    def test_tip_displaces_all_spots_equally(self):
        a2 = 1.0
        spots = capture(uniform_field(screen_from({2: a2})), GEOMETRY)
        slopes = extract_slopes(spots)
        predicted = 2.0 * a2 / R_AP          # tilt gradient, rad/m
        assert np.nanmean(slopes.slope_y) == pytest.approx(predicted,
                                                           rel=0.02)
        assert np.nanstd(slopes.slope_y) < 0.02 * predicted
        assert abs(np.nanmean(slopes.slope_x)) < 0.02 * predicted
        # displacement = focal length x tilt angle
        disp = np.nanmean(slopes.slope_y) * WAVELENGTH \
            * GEOMETRY.focal_length / (2 * math.pi)
        geometric = GEOMETRY.focal_length * predicted * WAVELENGTH \
            / (2 * math.pi)
        assert disp == pytest.approx(geometric, rel=0.02)

    def test_defocus_displacements_linear_in_position(self):
        spots = capture(uniform_field(screen_from({5: 0.5})), GEOMETRY)
        slopes = extract_slopes(spots)
        cx, _ = GEOMETRY.centers()
        gx = np.broadcast_to(cx, (23, 23))
        r = np.corrcoef(gx.ravel(), slopes.slope_x.ravel())[0, 1]
        assert r > 0.999

    def test_insufficient_sampling_rejected(self):
        coarse = Grid(96, 150e-6 / 4)        # 4 samples per lenslet
        field = ComplexField(coarse, WAVELENGTH,
                             np.ones((96, 96), complex))
        with pytest.raises(ValueError, match="8"):
            capture(field, GEOMETRY)

    def test_grid_must_cover_array(self):
        small = Grid(64, 12.5e-6)
        field = ComplexField(small, WAVELENGTH, np.ones((64, 64), complex))
        with pytest.raises(ValueError):
            capture(field, GEOMETRY)

    def test_noise_is_reproducible_and_off_by_default(self):
        base = capture(uniform_field(), GEOMETRY)
        again = capture(uniform_field(), GEOMETRY)
        assert np.array_equal(base.images, again.images)
        noisy1 = capture(uniform_field(), GEOMETRY, read_noise=0.01,
                         noise_seed=4)
        noisy2 = capture(uniform_field(), GEOMETRY, read_noise=0.01,
                         noise_seed=4)
        assert np.array_equal(noisy1.images, noisy2.images)
        assert not np.array_equal(noisy1.images, base.images)


class TestExtractSlopes:
    def test_known_offset_definition(self):
        # spot moved by exactly 2 pixels: slope = (2 pi / lambda) * 2 px / f
        spots = capture(uniform_field(), GEOMETRY)
        rolled = np.roll(spots.images, 2, axis=3)
        moved = SpotImage(images=rolled, geometry=GEOMETRY,
                          wavelength=WAVELENGTH,
                          field_samples_per_lenslet=12)
        slopes = extract_slopes(moved)
        expected = 2 * GEOMETRY.pixel_size / GEOMETRY.focal_length \
            * 2 * math.pi / WAVELENGTH
        assert np.nanmean(slopes.slope_x) == pytest.approx(expected,
                                                           rel=0.01)

    def test_doughnut_core_lenslets_invalid(self):
        field = lg_mode(4, 0, 1.0e-3, GRID, WAVELENGTH)
        slopes = extract_slopes(capture(field, GEOMETRY))
        assert not slopes.valid[11, 11]       # dark core
        assert slopes.valid.sum() > 100       # bright annulus usable
        assert np.isnan(slopes.slope_x[11, 11])

    def test_all_invalid_rejected(self):
        dark = ComplexField(GRID, WAVELENGTH,
                            np.zeros((512, 512), complex))
        spots = capture(dark, GEOMETRY)
        with pytest.raises(ValueError, match="floor"):
            extract_slopes(spots)


class TestModalFit:
    def test_single_mode_round_trip(self):
        spots = capture(uniform_field(screen_from({5: 0.4})), GEOMETRY)
        fit = modal_fit(extract_slopes(spots), j_max=15,
                        aperture_radius=R_AP)
        got = fit.spectrum.as_dict()
        assert got[5] == pytest.approx(0.4, rel=0.02)
        assert max(abs(v) for j, v in got.items() if j != 5) < 0.02

    def test_zero_slopes_zero_coefficients(self):
        fit = modal_fit(extract_slopes(capture(uniform_field(), GEOMETRY)),
                        j_max=15, aperture_radius=R_AP)
        assert all(abs(a) < 1e-4 for _, a in fit.spectrum.coefficients)

    def test_random_spectrum_round_trip(self):
        rng = np.random.default_rng(11)
        coeffs = {j: rng.uniform(-1, 1) for j in range(2, 16)}
        spots = capture(uniform_field(screen_from(coeffs)), GEOMETRY)
        fit = modal_fit(extract_slopes(spots), j_max=15,
                        aperture_radius=R_AP)
        got = np.array([fit.spectrum.as_dict()[j] for j in range(2, 16)])
        want = np.array([coeffs[j] for j in range(2, 16)])
        err = np.linalg.norm(got - want) / np.linalg.norm(want)
        assert err < 0.02

    def test_fit_linearity(self):
        coeffs = {3: 0.5, 7: -0.3, 12: 0.2}
        results = {}
        for alpha in (0.1, 1.0, 2.0):
            scaled = {j: alpha * a for j, a in coeffs.items()}
            spots = capture(uniform_field(screen_from(scaled)), GEOMETRY)
            fit = modal_fit(extract_slopes(spots), j_max=15,
                            aperture_radius=R_AP)
            results[alpha] = np.array(
                [fit.spectrum.as_dict()[j] for j in (3, 7, 12)])
        base = results[1.0]
        for alpha in (0.1, 2.0):
            np.testing.assert_allclose(results[alpha], alpha * base,
                                       rtol=0.02, atol=2e-3)

    def test_piston_blindness(self):
        coeffs = {4: 0.3, 9: -0.2}
        screen = screen_from(coeffs)
        shifted = ComplexField(GRID, WAVELENGTH,
                               np.exp(1j * (screen.phase + 1.7)))
        plain = uniform_field(screen)
        f1 = modal_fit(extract_slopes(capture(plain, GEOMETRY)),
                       15, R_AP)
        f2 = modal_fit(extract_slopes(capture(shifted, GEOMETRY)),
                       15, R_AP)
        a1 = np.array([a for _, a in f1.spectrum.coefficients])
        a2 = np.array([a for _, a in f2.spectrum.coefficients])
        np.testing.assert_allclose(a1, a2, atol=1e-9)

    def test_residual_orthogonal_to_basis(self):
        rng = np.random.default_rng(3)
        coeffs = {j: rng.uniform(-0.5, 0.5) for j in range(2, 16)}
        slopes = extract_slopes(capture(uniform_field(screen_from(coeffs)),
                                        GEOMETRY))
        radius = R_AP
        cx, cy = GEOMETRY.centers()
        gx, gy = np.meshgrid(cx, cy, indexing="xy")
        use = slopes.valid & ((gx / radius) ** 2 + (gy / radius) ** 2 <= 1)
        fit = modal_fit(slopes, j_max=15, aperture_radius=radius)
        # rebuild the Gauss-averaged design matrix used by the fit
        from hydrolink.zernike import gradient_unchecked
        ux, uy = gx[use] / radius, gy[use] / radius
        off = GEOMETRY.pitch / (2 * math.sqrt(3)) / radius
        n_pts = ux.size
        basis = np.zeros((2 * n_pts, 14))
        for col, j in enumerate(range(2, 16)):
            idx = nm_from_index(j)
            for ox in (-off, off):
                for oy in (-off, off):
                    dzx, dzy = gradient_unchecked(idx, ux + ox, uy + oy)
                    basis[:n_pts, col] += dzx
                    basis[n_pts:, col] += dzy
        basis /= 4 * radius
        meas = np.concatenate([slopes.slope_x[use], slopes.slope_y[use]])
        coeff_vec = np.array([a for _, a in fit.spectrum.coefficients])
        residual = meas - basis @ coeff_vec
        for col in range(14):
            cosine = abs(basis[:, col] @ residual) \
                / (np.linalg.norm(basis[:, col]) * np.linalg.norm(residual))
            assert cosine < 1e-8

    def test_masked_lenslets_robustness(self):
        rng = np.random.default_rng(17)
        coeffs = {j: rng.uniform(-0.5, 0.5) for j in range(2, 16)}
        slopes = extract_slopes(capture(uniform_field(screen_from(coeffs)),
                                        GEOMETRY))
        full = modal_fit(slopes, j_max=15, aperture_radius=R_AP)
        mask = rng.random((23, 23)) > 0.2     # drop ~20%
        masked = SlopeField(slope_x=np.where(mask, slopes.slope_x, np.nan),
                            slope_y=np.where(mask, slopes.slope_y, np.nan),
                            valid=slopes.valid & mask, geometry=GEOMETRY)
        part = modal_fit(masked, j_max=15, aperture_radius=R_AP)
        a_full = np.array([full.spectrum.as_dict()[j]
                           for j in range(2, 11)])
        a_part = np.array([part.spectrum.as_dict()[j]
                           for j in range(2, 11)])
        rel = np.linalg.norm(a_part - a_full) / np.linalg.norm(a_full)
        assert rel < 0.05

    def test_too_few_lenslets(self):
        slopes = extract_slopes(capture(uniform_field(), GEOMETRY))
        starved = SlopeField(
            slope_x=slopes.slope_x, slope_y=slopes.slope_y,
            valid=np.zeros((23, 23), bool), geometry=GEOMETRY)
        starved.valid.flags.writeable = False
        keep = np.zeros((23, 23), bool)
        keep[11, 11:16] = True
        starved = SlopeField(slope_x=slopes.slope_x,
                             slope_y=slopes.slope_y, valid=keep,
                             geometry=GEOMETRY)
        with pytest.raises(ValueError, match="constrain"):
            modal_fit(starved, j_max=15, aperture_radius=R_AP)

    def test_default_aperture_is_valid_box(self):
        slopes = extract_slopes(capture(uniform_field(), GEOMETRY))
        assert fit_aperture_radius(slopes) == pytest.approx(
            11.5 * GEOMETRY.pitch)

    def test_collinear_pattern_rank_deficient(self):
        # a single row of lenslets cannot constrain the 2-d mode set
        slopes = extract_slopes(capture(uniform_field(), GEOMETRY))
        keep = np.zeros((23, 23), bool)
        keep[11, :] = True
        starved = SlopeField(slope_x=slopes.slope_x,
                             slope_y=slopes.slope_y, valid=keep,
                             geometry=GEOMETRY)
        with pytest.raises(ValueError, match="rank|constrain"):
            modal_fit(starved, j_max=15, aperture_radius=R_AP)


class TestReconstruct:
    def test_empty_spectrum_flat(self, grid256):
        from hydrolink.shack_hartmann import WfsResult
        res = WfsResult(spectrum=ZernikeSpectrum((), 1e-3),
                        residual_rms=0.0, n_valid_lenslets=0)
        screen = reconstruct_wavefront(res, grid256)
        assert np.all(screen.phase == 0.0)

    def test_round_trip_reconstruction_error(self):
        rng = np.random.default_rng(23)
        coeffs = {j: rng.uniform(-0.8, 0.8) for j in range(2, 16)}
        screen = screen_from(coeffs)
        fit = modal_fit(extract_slopes(capture(uniform_field(screen),
                                               GEOMETRY)),
                        j_max=15, aperture_radius=R_AP)
        recon = reconstruct_wavefront(fit, GRID)
        x, y = GRID.mesh()
        inside = np.hypot(x, y) <= R_AP
        err = recon.phase[inside] - screen.phase[inside]
        rms_in = np.sqrt(np.mean(screen.phase[inside] ** 2))
        assert np.sqrt(np.mean(err**2)) < 0.05 * rms_in

    def test_tip_only_plane_ramp(self):
        fit = modal_fit(extract_slopes(capture(
            uniform_field(screen_from({2: 1.0})), GEOMETRY)),
            j_max=3, aperture_radius=R_AP)
        recon = reconstruct_wavefront(fit, GRID)
        x, y = GRID.mesh()
        inside = np.hypot(x, y) <= 0.9 * R_AP
        grad_y = np.gradient(recon.phase, GRID.spacing, axis=0)
        vals = grad_y[inside]
        assert np.std(vals) < 0.05 * abs(np.mean(vals))


class TestAverageMagnitudes:
    def _result(self, coeffs):
        from hydrolink.shack_hartmann import WfsResult
        return WfsResult(spectrum=ZernikeSpectrum.from_dict(coeffs, 1e-3),
                         residual_rms=0.0, n_valid_lenslets=1)

    def test_single_result(self):
        avg = average_magnitudes([self._result({2: -0.4, 3: 0.1})])
        assert avg.mean_abs == (0.4, 0.1)
        assert avg.n_frames == 1

    def test_magnitudes_not_signed_mean(self):
        avg = average_magnitudes([self._result({3: 0.2}),
                                  self._result({3: -0.2})])
        assert avg.mean_abs[avg.j_values.index(3)] == pytest.approx(0.2)

    def test_order_insensitive(self):
        rng = np.random.default_rng(5)
        results = [self._result({2: rng.normal(), 3: rng.normal()})
                   for _ in range(20)]
        fwd = average_magnitudes(results)
        rev = average_magnitudes(list(reversed(results)))
        assert fwd.mean_abs == rev.mean_abs
        assert fwd.std == rev.std

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            average_magnitudes([])

    def test_mismatched_ranges_rejected(self):
        with pytest.raises(ValueError):
            average_magnitudes([self._result({2: 0.1}),
                                self._result({2: 0.1, 3: 0.2})])

    def test_thirty_frame_half_normal_statistics(self):
        # 30 frames at sigma = 0.1: pooled mean |a_j| near 0.0798
        sigma = 0.1
        stats = {j: sigma for j in range(2, 16)}
        results = []
        for frame in range(30):
            screen, _ = sample_modal_screen(stats, R_AP, GRID, seed=frame)
            spots = capture(uniform_field(screen), GEOMETRY)
            results.append(modal_fit(extract_slopes(spots), j_max=15,
                                     aperture_radius=R_AP))
        avg = average_magnitudes(results)
        pooled = float(np.mean(avg.mean_abs))
        target = sigma * math.sqrt(2 / math.pi)    # 0.0798
        assert pooled == pytest.approx(target, rel=0.20)
