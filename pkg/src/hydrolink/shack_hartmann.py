"""Shack-Hartmann wavefront sensing and modal reconstruction.

The sensor model forms each lenslet's focal spot physically (far-field
transform of the sub-aperture field), so spots degrade realistically on
vortex cores and speckle; geometric spot-displacement predictions remain
available to tests as an independent oracle. Slopes are extracted by
center-of-mass centroiding, and modal coefficients by a least-squares fit of
the slope field against the Zernike gradient basis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .field import ComplexField, Grid
from .seeding import substream
from .zernike import (PhaseScreen, ZernikeSpectrum, gradient_unchecked,
                      nm_from_index, phase_from_spectrum)


@dataclass(frozen=True)
class LensletArray:
    """Geometry of the micro-lens array and its camera.

    Defaults describe a 23x23 array with 150 um pitch and 5.2 mm focal
    length; the camera pixel size and per-lenslet pixel count are package
    defaults chosen so one sub-image exactly tiles one pitch.
    """

    count_x: int = 23
    count_y: int = 23
    pitch: float = 150e-6
    focal_length: float = 5.2e-3
    pixel_size: float = 5e-6
    pixels_per_lenslet: int = 30

    def __post_init__(self):
        for name in ("count_x", "count_y", "pixels_per_lenslet"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("pitch", "focal_length", "pixel_size"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def extent_x(self) -> float:
        return self.count_x * self.pitch

    @property
    def extent_y(self) -> float:
        return self.count_y * self.pitch

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical (x, y) lenslet-center coordinate vectors, array centered
        on the optical axis."""
        cx = (np.arange(self.count_x) + 0.5) * self.pitch - self.extent_x / 2
        cy = (np.arange(self.count_y) + 0.5) * self.pitch - self.extent_y / 2
        return cx, cy


@dataclass(frozen=True)
class SpotImage:
    """Focal-plane intensities, one sub-image per lenslet.

    ``images`` has shape (count_y, count_x, P, P) with P pixels per lenslet
    side; ``wavelength`` and the field sampling density are carried along so
    slope extraction can convert spot displacement into phase gradient and
    calibrate its centroid gain against the same optical model.
    """

    images: np.ndarray
    geometry: LensletArray
    wavelength: float
    field_samples_per_lenslet: int = 16

    def __post_init__(self):
        img = np.asarray(self.images, dtype=float)
        p = self.geometry.pixels_per_lenslet
        want = (self.geometry.count_y, self.geometry.count_x, p, p)
        if img.shape != want:
            raise ValueError(f"images shape {img.shape}, expected {want}")
        if np.any(img < 0) or not np.all(np.isfinite(img)):
            raise ValueError("spot intensities must be finite and >= 0")
        if self.field_samples_per_lenslet < 2:
            raise ValueError("field_samples_per_lenslet must be >= 2")
        img = img.copy()
        img.flags.writeable = False
        object.__setattr__(self, "images", img)


@dataclass(frozen=True)
class SlopeField:
    """Per-lenslet wavefront phase gradients in radians per meter.

    Lenslets without enough light are flagged invalid rather than
    zero-filled; their slope entries are NaN.
    """

    slope_x: np.ndarray
    slope_y: np.ndarray
    valid: np.ndarray
    geometry: LensletArray

    def __post_init__(self):
        shape = (self.geometry.count_y, self.geometry.count_x)
        for name in ("slope_x", "slope_y", "valid"):
            arr = np.asarray(getattr(self, name))
            if arr.shape != shape:
                raise ValueError(f"{name} shape {arr.shape}, want {shape}")
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_valid(self) -> int:
        return int(np.count_nonzero(self.valid))


@dataclass(frozen=True)
class WfsResult:
    spectrum: ZernikeSpectrum
    residual_rms: float
    n_valid_lenslets: int

    def __post_init__(self):
        if self.residual_rms < 0:
            raise ValueError("residual_rms must be >= 0")


def capture(field: ComplexField, geometry: LensletArray,
            read_noise: float = 0.0, shot_noise_photons: float = 0.0,
            noise_seed: int = 0) -> SpotImage:
    """Image the field through the lenslet array onto the camera.

    Each sub-aperture is Fourier-transformed to the lenslet's focal plane
    (focal-plane coordinate x = lambda * f * fx) and sampled at the camera
    pixel positions, so a mean phase gradient g displaces the spot by
    ~ f * g * lambda / (2 pi) as the geometric model predicts.

    The field grid must cover the array with at least 8 samples per lenslet
    and an integer number of samples per pitch. Optional detector noise
    (additive Gaussian ``read_noise`` relative to the peak, Poisson shot
    noise with ``shot_noise_photons`` photons in the brightest sub-image) is
    off by default.
    """
    grid = field.grid
    if grid.extent < geometry.extent_x or grid.extent < geometry.extent_y:
        raise ValueError("field grid extent smaller than lenslet array")
    ratio = geometry.pitch / grid.spacing
    samples = int(round(ratio))
    if abs(ratio - samples) > 1e-9 * ratio:
        raise ValueError(
            f"lenslet pitch {geometry.pitch} is not an integer number of "
            f"grid samples (pitch/spacing = {ratio})")
    if samples < 8:
        raise ValueError(
            f"need >= 8 field samples per lenslet, got {samples}")

    n = grid.n_samples
    coords = grid.coords()
    cx, cy = geometry.centers()
    # Index of the first sample of each lenslet window.
    ix0 = np.rint((cx - geometry.pitch / 2 - coords[0])
                  / grid.spacing).astype(int)
    iy0 = np.rint((cy - geometry.pitch / 2 - coords[0])
                  / grid.spacing).astype(int)
    if ix0.min() < 0 or iy0.min() < 0 or ix0.max() + samples > n \
            or iy0.max() + samples > n:
        raise ValueError("lenslet array does not fit inside the field grid")

    # Block view (count_y, count_x, samples_y, samples_x); the array is
    # contiguous on the grid so one reshape suffices.
    amp = field.amplitude[iy0[0]:iy0[-1] + samples,
                          ix0[0]:ix0[-1] + samples]
    blocks = amp.reshape(geometry.count_y, samples,
                         geometry.count_x, samples).transpose(0, 2, 1, 3)

    # Local coordinates within a window relative to its lenslet center are
    # identical for every lenslet (integer tiling), as are the camera pixel
    # offsets, so one DFT matrix per axis serves all sub-apertures.
    local_x = coords[ix0[0]:ix0[0] + samples] - cx[0]
    local_y = coords[iy0[0]:iy0[0] + samples] - cy[0]
    p = geometry.pixels_per_lenslet
    pix = (np.arange(p) - (p - 1) / 2.0) * geometry.pixel_size
    lam_f = field.wavelength * geometry.focal_length
    kern_x = np.exp(-2j * math.pi * np.outer(pix, local_x) / lam_f)
    kern_y = np.exp(-2j * math.pi * np.outer(pix, local_y) / lam_f)
    spots = np.einsum("vn,yxnm,um->yxvu", kern_y, blocks, kern_x,
                      optimize=True)
    images = np.abs(spots) ** 2

    if shot_noise_photons > 0.0 or read_noise > 0.0:
        rng = substream(noise_seed)
        peak_sub = images.sum(axis=(2, 3)).max()
        if shot_noise_photons > 0.0 and peak_sub > 0.0:
            gain = shot_noise_photons / peak_sub
            images = rng.poisson(images * gain).astype(float) / gain
        if read_noise > 0.0:
            images = images + rng.normal(
                0.0, read_noise * images.max(), size=images.shape)
        images = np.clip(images, 0.0, None)

    return SpotImage(images=images, geometry=geometry,
                     wavelength=field.wavelength,
                     field_samples_per_lenslet=samples)


def _windowed_com(img: np.ndarray, pix: np.ndarray, floor: float,
                  half: int) -> tuple[float, float] | None:
    """Iteratively re-centered center of mass of one sub-image.

    A full-frame center of mass drags the slowly decaying diffraction tails
    against the window edges, biasing displacements low by several percent;
    re-centering a smaller window on the spot keeps the truncation symmetric
    about the spot itself. Two re-centering passes are enough since the
    initial estimate is already within a fraction of a pixel.
    """
    work = img - floor * img.max()
    np.clip(work, 0.0, None, out=work)
    tot = work.sum()
    if tot <= 0.0:
        return None
    p = img.shape[0]
    cu = float((work.sum(axis=0) @ pix) / tot)
    cv = float((work.sum(axis=1) @ pix) / tot)
    step = pix[1] - pix[0]

    def bounds(c):
        # pixels whose centers lie within +-(half * step) of c, chosen
        # symmetrically about c so the truncation itself stays unbiased
        lo = int(math.ceil((c - half * step - pix[0]) / step - 1e-9))
        hi = int(math.floor((c + half * step - pix[0]) / step + 1e-9)) + 1
        return max(0, lo), min(p, hi)

    for _ in range(2):
        u0, u1 = bounds(cu)
        v0, v1 = bounds(cv)
        win = work[v0:v1, u0:u1]
        wtot = win.sum()
        if wtot <= 0.0:
            return None
        cu = float((win.sum(axis=0) @ pix[u0:u1]) / wtot)
        cv = float((win.sum(axis=1) @ pix[v0:v1]) / wtot)
    return cu, cv


@lru_cache(maxsize=32)
def _centroid_response(geometry: LensletArray, wavelength: float,
                       samples: int, centroid_floor: float,
                       half: int) -> tuple[np.ndarray, np.ndarray]:
    """Displacement response curve of the windowed center of mass.

    The diffraction tails a hard-edged sub-aperture throws across the finite
    centroiding window make the measured spot displacement a few percent
    smaller than f * tilt, with a pixel-quantization ripple on top. Calibrate
    the response the way a bench sensor is calibrated: push uniform
    sub-aperture fields with known tilts through the identical spot-formation
    and centroiding path. Returns (measured, true) displacement tables for
    inverse interpolation; both start at 0 and are strictly increasing.
    """
    spacing = geometry.pitch / samples
    local = (np.arange(samples) - (samples - 1) / 2.0) * spacing
    p = geometry.pixels_per_lenslet
    pix = (np.arange(p) - (p - 1) / 2.0) * geometry.pixel_size
    lam_f = wavelength * geometry.focal_length
    kern = np.exp(-2j * math.pi * np.outer(pix, local) / lam_f)
    true = np.arange(0.0, 3.001, 0.0625) * geometry.pixel_size
    measured = [0.0]
    for disp in true[1:]:
        grad = disp * 2.0 * math.pi / lam_f      # phase slope giving disp
        block = np.exp(1j * grad * local)[None, :] * np.ones((samples, 1))
        spot = np.abs(kern @ block @ kern.T) ** 2
        com = _windowed_com(spot, pix, centroid_floor, half)
        if com is None:
            raise RuntimeError(
                "centroid calibration produced an empty window; "
                "unusable sensor configuration")
        measured.append(com[0])
    measured = np.asarray(measured)
    if np.any(np.diff(measured) <= 0):
        raise RuntimeError("centroid response is not monotone; "
                           "unusable sensor configuration")
    return measured, true


def _invert_response(com: float, measured: np.ndarray,
                     true: np.ndarray) -> float:
    mag = abs(com)
    if mag >= measured[-1]:                      # extrapolate linearly
        slope = (true[-1] - true[-2]) / (measured[-1] - measured[-2])
        val = true[-1] + (mag - measured[-1]) * slope
    else:
        val = float(np.interp(mag, measured, true))
    return math.copysign(val, com)


def extract_slopes(spots: SpotImage, intensity_floor: float = 0.01,
                   centroid_floor: float = 0.01) -> SlopeField:
    """Centroid each sub-image and convert displacements to phase slopes.

    Lenslets whose total energy falls below ``intensity_floor`` times the
    brightest lenslet's energy are flagged invalid. Each valid sub-image is
    centroided (center of mass after subtracting ``centroid_floor`` of its
    own peak, iteratively windowed around the spot), the displacement is
    corrected by the model's own centroid gain, and the slope in radians
    per meter is (2 pi / lambda) * displacement / focal_length.
    """
    if not 0.0 <= intensity_floor < 1.0:
        raise ValueError("intensity_floor must be in [0, 1)")
    geom = spots.geometry
    images = spots.images
    energy = images.sum(axis=(2, 3))
    peak = energy.max()
    valid = (energy > 0) & (energy >= intensity_floor * peak)
    if peak <= 0.0 or not valid.any():
        raise ValueError("all lenslets below the intensity floor")

    p = geom.pixels_per_lenslet
    pix = (np.arange(p) - (p - 1) / 2.0) * geom.pixel_size
    # Window half-width: ~2.5 diffraction lobes of one sub-aperture.
    lobe_px = spots.wavelength * geom.focal_length / (geom.pitch
                                                      * geom.pixel_size)
    half = max(3, int(round(2.5 * lobe_px)))
    resp_meas, resp_true = _centroid_response(
        geom, spots.wavelength, spots.field_samples_per_lenslet,
        centroid_floor, half)
    scale = 2.0 * math.pi / (spots.wavelength * geom.focal_length)

    slope_x = np.full((geom.count_y, geom.count_x), np.nan)
    slope_y = np.full((geom.count_y, geom.count_x), np.nan)
    ok = np.zeros((geom.count_y, geom.count_x), dtype=bool)
    for iy, ix in zip(*np.nonzero(valid)):
        com = _windowed_com(images[iy, ix], pix, centroid_floor, half)
        if com is None:
            continue
        slope_x[iy, ix] = _invert_response(com[0], resp_meas, resp_true) \
            * scale
        slope_y[iy, ix] = _invert_response(com[1], resp_meas, resp_true) \
            * scale
        ok[iy, ix] = True
    return SlopeField(slope_x=slope_x, slope_y=slope_y, valid=ok,
                      geometry=geom)


def spot_mosaic(spots: SpotImage) -> np.ndarray:
    """All sub-images tiled into one 2-D array for visual inspection."""
    geom = spots.geometry
    p = geom.pixels_per_lenslet
    mosaic = spots.images.transpose(0, 2, 1, 3).reshape(
        geom.count_y * p, geom.count_x * p)
    return mosaic


def fit_aperture_radius(slopes: SlopeField) -> float:
    """Default analysis-disk radius: half-width of the valid lenslet box."""
    cx, cy = slopes.geometry.centers()
    gx, gy = np.meshgrid(cx, cy, indexing="xy")
    half = slopes.geometry.pitch / 2
    return float(min(np.abs(gx[slopes.valid]).max(),
                     np.abs(gy[slopes.valid]).max()) + half)


def modal_fit(slopes: SlopeField, j_max: int = 15,
              aperture_radius: float | None = None) -> WfsResult:
    """Least-squares Zernike coefficients (j = 2..j_max) from slopes.

    Lenslet centers are mapped to unit-disk coordinates over the analysis
    aperture; both slope components of every valid lenslet inside the disk
    enter the system, which is solved by SVD (never via normal equations).
    Each basis entry is the gradient averaged over the lenslet square (2x2
    Gauss points, exact through cubic gradients, i.e. all n <= 4 modes),
    because a uniformly lit sub-aperture measures its area-mean gradient,
    not the center value. Piston is excluded as unobservable.
    ``residual_rms`` is the RMS slope residual expressed in radians per unit
    disk radius.
    """
    if j_max < 2:
        raise ValueError("j_max must be >= 2")
    geom = slopes.geometry
    radius = fit_aperture_radius(slopes) if aperture_radius is None \
        else float(aperture_radius)
    if not radius > 0:
        raise ValueError("aperture_radius must be > 0")

    cx, cy = geom.centers()
    gx, gy = np.meshgrid(cx, cy, indexing="xy")
    ux = gx / radius
    uy = gy / radius
    use = slopes.valid & (ux**2 + uy**2 <= 1.0)
    n_pts = int(np.count_nonzero(use))
    n_modes = j_max - 1
    if n_pts < n_modes:
        raise ValueError(
            f"{n_pts} usable lenslets cannot constrain {n_modes} modes")

    ux = ux[use]
    uy = uy[use]
    gauss = geom.pitch / (2.0 * math.sqrt(3.0)) / radius
    basis = np.zeros((2 * n_pts, n_modes))
    for col, j in enumerate(range(2, j_max + 1)):
        idx = nm_from_index(j)
        for ox in (-gauss, gauss):
            for oy in (-gauss, gauss):
                dzx, dzy = gradient_unchecked(idx, ux + ox, uy + oy)
                basis[:n_pts, col] += dzx
                basis[n_pts:, col] += dzy
    basis /= 4.0 * radius
    meas = np.concatenate([slopes.slope_x[use], slopes.slope_y[use]])

    coeffs, _, rank, _ = np.linalg.lstsq(basis, meas, rcond=None)
    if rank < n_modes:
        raise ValueError(
            f"rank-deficient slope system (rank {rank} < {n_modes}); "
            "lenslet pattern is degenerate")
    residual = meas - basis @ coeffs
    residual_rms = float(np.sqrt(np.mean(residual**2))) * radius

    spectrum = ZernikeSpectrum(
        tuple((j, float(a)) for j, a in zip(range(2, j_max + 1), coeffs)),
        aperture_radius=radius)
    return WfsResult(spectrum=spectrum, residual_rms=residual_rms,
                     n_valid_lenslets=slopes.n_valid)


def reconstruct_wavefront(result: WfsResult, grid: Grid) -> PhaseScreen:
    """Render the fitted spectrum back onto a grid (radians)."""
    return phase_from_spectrum(result.spectrum, grid, label="reconstruction")


@dataclass(frozen=True)
class ModalAverage:
    """Per-mode |a_j| statistics over a set of frames."""

    j_values: tuple[int, ...]
    mean_abs: tuple[float, ...]
    std: tuple[float, ...]
    stderr: tuple[float, ...]
    n_frames: int


def average_magnitudes(results: Sequence[WfsResult]) -> ModalAverage:
    """Mean of |a_j| across frames, with spread.

    Magnitudes are averaged (not signed coefficients), matching how randomly
    fluctuating aberrations are summarized; compensated summation keeps the
    result independent of frame order. Both the standard deviation and the
    standard error of the mean are reported.
    """
    if not results:
        raise ValueError("average_magnitudes needs at least one result")
    j_values = tuple(j for j, _ in results[0].spectrum.coefficients)
    for r in results[1:]:
        if tuple(j for j, _ in r.spectrum.coefficients) != j_values:
            raise ValueError("results do not share a common mode range")
    n = len(results)
    mean_abs = []
    std = []
    for pos, j in enumerate(j_values):
        mags = [abs(r.spectrum.coefficients[pos][1]) for r in results]
        m = math.fsum(mags) / n
        var = math.fsum((x - m) ** 2 for x in mags) / (n - 1) if n > 1 else 0.0
        mean_abs.append(m)
        std.append(math.sqrt(var))
    stderr = tuple(s / math.sqrt(n) for s in std)
    return ModalAverage(j_values=j_values, mean_abs=tuple(mean_abs),
                        std=tuple(std), stderr=stderr, n_frames=n)
