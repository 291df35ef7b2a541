import math

import numpy as np
import pytest

from hydrolink.channel import (AliasingError, ChannelConfig, ChannelResult,
                               Occluder, angular_spectrum_propagate,
                               apply_attenuation, apply_occlusion,
                               apply_phase_screen, run_channel,
                               transmittance)
from hydrolink.field import (ComplexField, GridMismatchError, beam_width,
                             centroid, find_vortices, lg_mode, petal_mode,
                             total_power, total_vortex_charge)
from hydrolink.zernike import ZernikeSpectrum, phase_from_spectrum
from hydrolink.scenario import modal_sigma_table

from conftest import WATER_N, WAVELENGTH, rayleigh_range


class TestTransmittance:
    def test_zero_attenuation(self):
        assert transmittance(0.0, 123.0) == 1.0

    def test_turbid_coastal_10m(self):
        # 1.3 dB/m over 10 m: 10^-1.3
        assert transmittance(1.3, 10.0) == pytest.approx(10**-1.3, rel=1e-12)
        assert transmittance(1.3, 10.0) == pytest.approx(0.0501187, rel=1e-5)

    def test_river_5m(self):
        assert transmittance(5.4, 5.0) == pytest.approx(10**-2.7, rel=1e-12)
        assert transmittance(5.4, 5.0) == pytest.approx(2.0e-3, rel=5e-3)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            transmittance(-0.1, 1.0)


class TestAttenuation:
    def test_identity(self, gaussian512):
        out = apply_attenuation(gaussian512, 0.0, 5.0)
        assert np.array_equal(out.amplitude, gaussian512.amplitude)

    def test_river_full_length(self, gaussian512):
        out = apply_attenuation(gaussian512, 5.4, 5.5)
        ratio = total_power(out) / total_power(gaussian512)
        assert ratio == pytest.approx(10**-2.97, rel=1e-9)
        assert ratio == pytest.approx(1.07e-3, abs=2e-6)

    def test_pure_water_100m(self, gaussian512):
        out = apply_attenuation(gaussian512, 0.13, 100.0)
        ratio = total_power(out) / total_power(gaussian512)
        assert ratio == pytest.approx(10**-1.3, rel=1e-9)
        assert ratio == pytest.approx(0.050, abs=2e-4)

    def test_composes_multiplicatively(self, gaussian512):
        half = apply_attenuation(
            apply_attenuation(gaussian512, 5.4, 2.75), 5.4, 2.75)
        full = apply_attenuation(gaussian512, 5.4, 5.5)
        np.testing.assert_allclose(half.amplitude, full.amplitude,
                                   rtol=1e-14, atol=0.0)


class TestPropagation:
    def test_zero_distance_identity(self, gaussian512):
        out = angular_spectrum_propagate(gaussian512, 0.0, WATER_N)
        assert np.array_equal(out.amplitude, gaussian512.amplitude)

    def test_power_conserved(self, gaussian512):
        out = angular_spectrum_propagate(gaussian512, 5.5, WATER_N)
        assert abs(total_power(out) - total_power(gaussian512)) < 1e-10

    def test_rayleigh_range_width_growth(self, gaussian512):
        w0 = beam_width(gaussian512)
        zr = rayleigh_range(gaussian512.grid.extent / 16)
        out = angular_spectrum_propagate(gaussian512, zr, WATER_N)
        assert beam_width(out) / w0 == pytest.approx(math.sqrt(2), rel=5e-3)

    def test_semigroup(self, gaussian512):
        one = angular_spectrum_propagate(
            angular_spectrum_propagate(gaussian512, 1.3, WATER_N), 2.2,
            WATER_N)
        two = angular_spectrum_propagate(gaussian512, 3.5, WATER_N)
        rel = np.linalg.norm(one.amplitude - two.amplitude) \
            / np.linalg.norm(two.amplitude)
        assert rel < 1e-9

    def test_vortex_charge_preserved(self, grid512):
        f = lg_mode(4, 0, grid512.extent / 16, grid512, WAVELENGTH)
        out = angular_spectrum_propagate(f, 2.0, WATER_N)
        assert total_vortex_charge(find_vortices(out)) == 4

    def test_aliasing_guard(self, grid256):
        rng = np.random.default_rng(0)
        noisy = ComplexField(grid256, WAVELENGTH,
                             rng.normal(size=(256, 256)).astype(complex))
        with pytest.raises(AliasingError):
            angular_spectrum_propagate(noisy, 0.1, WATER_N)

    def test_negative_distance(self, gaussian512):
        with pytest.raises(ValueError):
            angular_spectrum_propagate(gaussian512, -1.0, WATER_N)


class TestPhaseScreenApplication:
    def test_zero_screen_identity(self, gaussian512):
        screen = phase_from_spectrum(
            ZernikeSpectrum((), 0.4 * gaussian512.grid.extent),
            gaussian512.grid)
        out = apply_phase_screen(gaussian512, screen)
        np.testing.assert_array_equal(out.amplitude, gaussian512.amplitude)

    def test_power_conserved_exactly(self, gaussian512):
        screen = phase_from_spectrum(
            ZernikeSpectrum(((5, 1.2), (8, -0.4)),
                            0.4 * gaussian512.grid.extent),
            gaussian512.grid)
        out = apply_phase_screen(gaussian512, screen)
        assert total_power(out) == pytest.approx(total_power(gaussian512),
                                                 rel=1e-14)

    def test_grid_mismatch(self, gaussian512, grid256):
        screen = phase_from_spectrum(
            ZernikeSpectrum((), 0.4 * grid256.extent), grid256)
        with pytest.raises(GridMismatchError):
            apply_phase_screen(gaussian512, screen)

    def test_tilt_then_propagation_displaces_centroid(self, grid512):
        f = lg_mode(0, 0, grid512.extent / 16, grid512, WAVELENGTH)
        r_ap = 0.45 * grid512.extent
        screen = phase_from_spectrum(ZernikeSpectrum(((3, 0.8),), r_ap),
                                     grid512)
        length = 4.0
        out = angular_spectrum_propagate(apply_phase_screen(f, screen),
                                         length, WATER_N)
        cx, cy = centroid(out)
        k_med = 2 * math.pi * WATER_N / WAVELENGTH
        predicted = length * (2 * 0.8 / r_ap) / k_med
        assert cx == pytest.approx(predicted, rel=0.01)
        assert abs(cy) < abs(predicted) * 0.01

    def test_astigmatism_splits_vortex(self, grid512):
        w = grid512.extent / 16
        f = lg_mode(4, 0, w, grid512, WAVELENGTH)
        screen = phase_from_spectrum(
            ZernikeSpectrum(((6, 0.3 * 2 * math.pi),),
                            0.45 * grid512.extent), grid512)
        out = angular_spectrum_propagate(apply_phase_screen(f, screen),
                                         rayleigh_range(w), WATER_N)
        vs = find_vortices(out)
        assert len(vs) == 4
        assert all(v.charge == 1 for v in vs)


class TestOcclusion:
    def test_zero_opacity_identity(self, gaussian512):
        occ = Occluder(radius=1e-3, opacity=0.0, position=(0.0, 0.0))
        out = apply_occlusion(gaussian512, occ)
        assert np.array_equal(out.amplitude, gaussian512.amplitude)

    def test_quarter_area_disk_power(self, grid256):
        uniform = ComplexField(grid256, WAVELENGTH,
                               np.ones((256, 256), complex))
        radius = math.sqrt(0.25 / math.pi) * grid256.extent
        occ = Occluder(radius=radius, opacity=1.0, position=(0.0, 0.0),
                       edge_width=0.0)
        out = apply_occlusion(uniform, occ)
        ratio = total_power(out) / total_power(uniform)
        assert ratio == pytest.approx(0.75, rel=0.01)

    def test_half_petal_suppressed(self, grid512):
        # sin-type petal: lobes at 22.5 + k*45 degrees, none on the x = 0
        # boundary; a disk over the x > 0 half kills the four right lobes
        f = petal_mode(4, grid512.extent / 16, grid512, WAVELENGTH,
                       relative_sign=-1)
        big = 0.45 * grid512.extent
        occ = Occluder(radius=big, opacity=1.0, position=(big, 0.0))
        out = apply_occlusion(f, occ)
        inten = out.intensity()
        right = inten[:, 260:].sum()
        left = inten[:, :252].sum()
        assert right < 0.05 * left

    def test_random_position_deterministic(self, gaussian512):
        occ = Occluder(radius=1e-3, opacity=0.5)
        a = apply_occlusion(gaussian512, occ, seed=11)
        b = apply_occlusion(gaussian512, occ, seed=11)
        c = apply_occlusion(gaussian512, occ, seed=12)
        assert np.array_equal(a.amplitude, b.amplitude)
        assert not np.array_equal(a.amplitude, c.amplitude)

    def test_invalid_opacity(self):
        with pytest.raises(ValueError):
            Occluder(radius=1e-3, opacity=1.5)


class TestChannelConfig:
    def test_defaults_are_river_link(self):
        cfg = ChannelConfig()
        assert cfg.length == 5.5
        assert cfg.attenuation_db_per_m == 5.4
        assert cfg.refractive_index == 1.33

    @pytest.mark.parametrize("kwargs", [
        dict(length=0.0),
        dict(attenuation_db_per_m=-1.0),
        dict(n_screens=-1),
        dict(refractive_index=0.9),
        dict(screen_source="bogus"),
        dict(n_screens=2),                          # no source
        dict(n_screens=1, screen_source="modal"),   # no sigmas
        dict(n_screens=1, screen_source="kolmogorov"),
    ])
    def test_invalid_configs(self, kwargs):
        with pytest.raises(ValueError):
            ChannelConfig(**kwargs)

    def test_transmittance_bounds(self, gaussian512):
        with pytest.raises(ValueError):
            ChannelResult(output_field=gaussian512, transmittance=1.5,
                          screens_used=())


class TestRunChannel:
    def test_pure_propagation_composition(self, gaussian512):
        cfg = ChannelConfig(length=3.0, attenuation_db_per_m=0.0,
                            n_screens=0, screen_source="none")
        res = run_channel(gaussian512, cfg)
        direct = angular_spectrum_propagate(gaussian512, 3.0, WATER_N)
        np.testing.assert_allclose(res.output_field.amplitude,
                                   direct.amplitude, atol=1e-12)
        assert res.transmittance == pytest.approx(1.0, abs=1e-12)

    def test_river_default_transmittance(self, gaussian512):
        cfg = ChannelConfig(length=5.5, attenuation_db_per_m=5.4)
        res = run_channel(gaussian512, cfg)
        assert abs(res.transmittance - 1.07e-3) < 1e-5
        assert res.transmittance == pytest.approx(10**-2.97, rel=1e-9)

    def test_deterministic_with_seed(self, grid256):
        f = lg_mode(0, 0, grid256.extent / 16, grid256, WAVELENGTH)
        sig = tuple(modal_sigma_table(0.3, 15).items())
        cfg = ChannelConfig(length=5.5, attenuation_db_per_m=1.0,
                            n_screens=3, screen_source="modal",
                            modal_sigmas=sig, occlusion_rate=1.0, seed=21)
        r1 = run_channel(f, cfg)
        r2 = run_channel(f, cfg)
        assert np.array_equal(r1.output_field.amplitude,
                              r2.output_field.amplitude)
        assert r1.transmittance == r2.transmittance
        r3 = run_channel(f, cfg.with_seed(22))
        assert not np.array_equal(r1.output_field.amplitude,
                                  r3.output_field.amplitude)

    def test_ground_truth_spectra_returned(self, grid256):
        f = lg_mode(0, 0, grid256.extent / 16, grid256, WAVELENGTH)
        sig = tuple(modal_sigma_table(0.2, 15).items())
        cfg = ChannelConfig(length=5.5, attenuation_db_per_m=0.0,
                            n_screens=2, screen_source="modal",
                            modal_sigmas=sig, seed=5)
        res = run_channel(f, cfg)
        assert len(res.screens_used) == 2
        assert len(res.ground_truth_spectra) == 2
        assert all(len(s.coefficients) == 14
                   for s in res.ground_truth_spectra)

    def test_unitarity_with_screens(self, grid256):
        f = lg_mode(0, 0, grid256.extent / 16, grid256, WAVELENGTH)
        sig = tuple(modal_sigma_table(0.3, 15).items())
        cfg = ChannelConfig(length=5.5, attenuation_db_per_m=0.0,
                            n_screens=3, screen_source="modal",
                            modal_sigmas=sig, seed=9)
        res = run_channel(f, cfg)
        assert abs(total_power(res.output_field) - total_power(f)) < 1e-10

    def test_centroid_scatter_grows_with_sigma(self):
        from hydrolink.field import Grid
        grid = Grid(128, 8e-5)
        f = lg_mode(0, 0, grid.extent / 16, grid, WAVELENGTH)
        scatter = []
        for scale in (0.1, 0.3, 0.9):
            sig = tuple(modal_sigma_table(scale, 15).items())
            offsets = []
            for seed in range(200):
                cfg = ChannelConfig(length=5.5, attenuation_db_per_m=0.0,
                                    n_screens=3, screen_source="modal",
                                    modal_sigmas=sig, seed=seed)
                cx, cy = centroid(run_channel(f, cfg).output_field)
                offsets.append((cx, cy))
            offsets = np.array(offsets)
            scatter.append(float(np.sqrt(offsets.var(axis=0).sum())))
        assert scatter[0] < scatter[1] < scatter[2]

    def test_vortex_charge_through_turbulence(self, grid512):
        f = lg_mode(4, 0, grid512.extent / 16, grid512, WAVELENGTH)
        sig = tuple(modal_sigma_table(0.25, 15).items())
        for seed in range(5):
            cfg = ChannelConfig(length=5.5, attenuation_db_per_m=0.0,
                                n_screens=2, screen_source="modal",
                                modal_sigmas=sig, seed=seed)
            res = run_channel(f, cfg)
            assert total_vortex_charge(find_vortices(res.output_field)) == 4
