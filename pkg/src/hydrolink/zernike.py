"""Zernike polynomials, modal spectra, and random phase screens.

Single-index convention
-----------------------
Modes are ordered by ``j = 1 + (n*(n+2) + m) / 2`` with radial degree ``n``
and signed azimuthal index ``m``. This runs j = 1 (piston), 2/3 (tilt pair
(1,-1)/(1,1)), 4/5/6 ((2,-2) astigmatism, (2,0) defocus, (2,2) astigmatism),
..., 15 ((4,4)); the first 15 modes are exactly all n <= 4. Note: this is
the OSA/ANSI ordering shifted to start at 1, which differs from Noll's
classic sequence (where defocus is j = 4) even though the formula is often
labeled a "Noll index". The README carries a conversion table.

Polynomials are RMS-normalized over the unit disk (Noll normalization), so a
coefficient's magnitude in radians is directly the RMS phase it contributes.
Negative m pairs with sin(|m| phi), non-negative m with cos(|m| phi).

Coefficients are carried in radians of phase; :func:`radians_to_um` /
:func:`um_to_radians` convert to the micrometers of optical path that
commercial wavefront sensors report, and :func:`radians_to_waves` /
:func:`waves_to_radians` convert to waves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping

import numpy as np

from .field import Grid
from .seeding import TAG_COEFF, substream


@dataclass(frozen=True)
class ZernikeIndex:
    """A validated (n, m, j) index triple."""

    n: int
    m: int
    j: int

    def __post_init__(self):
        if self.n < 0:
            raise ValueError(f"radial degree n must be >= 0, got {self.n}")
        if abs(self.m) > self.n:
            raise ValueError(f"|m| must be <= n, got (n={self.n}, m={self.m})")
        if (self.n - abs(self.m)) % 2 != 0:
            raise ValueError(
                f"n - |m| must be even, got (n={self.n}, m={self.m})")
        expected = 1 + (self.n * (self.n + 2) + self.m) // 2
        if self.j != expected:
            raise ValueError(
                f"j={self.j} inconsistent with (n={self.n}, m={self.m}); "
                f"expected {expected}")


def index_from_nm(n: int, m: int) -> ZernikeIndex:
    """Build the scalar index from (n, m) via j = 1 + (n(n+2) + m)/2."""
    if abs(m) > n or (n - abs(m)) % 2 != 0:
        raise ValueError(f"invalid Zernike orders (n={n}, m={m})")
    return ZernikeIndex(n=n, m=m, j=1 + (n * (n + 2) + m) // 2)


def nm_from_index(j: int) -> ZernikeIndex:
    """Invert the scalar index; round-trips exactly with index_from_nm."""
    if j < 1:
        raise ValueError(f"scalar index j must be >= 1, got {j}")
    k = j - 1
    n = int(math.ceil((-3.0 + math.sqrt(9.0 + 8.0 * k)) / 2.0))
    m = 2 * k - n * (n + 2)
    return index_from_nm(n, m)


def _noll_norm(n: int, m: int) -> float:
    return math.sqrt(n + 1.0) if m == 0 else math.sqrt(2.0 * (n + 1.0))


@lru_cache(maxsize=None)
def _radial_coeffs(n: int, a: int) -> tuple[float, ...]:
    """Coefficients of R_n^a in descending powers rho^n .. rho^0."""
    coeffs = [0.0] * (n + 1)
    for k in range((n - a) // 2 + 1):
        c = ((-1) ** k * math.factorial(n - k)
             // (math.factorial(k)
                 * math.factorial((n + a) // 2 - k)
                 * math.factorial((n - a) // 2 - k)))
        coeffs[n - (n - 2 * k)] = float(c)   # position of power n-2k
    return tuple(coeffs)


def zernike_eval(idx: ZernikeIndex, rho, phi):
    """Evaluate Z_j at unit-disk radius rho and azimuth phi (radians).

    Accepts scalars or arrays. rho must lie in [0, 1].
    """
    rho = np.asarray(rho, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if np.any(rho < 0.0) or np.any(rho > 1.0 + 1e-12):
        raise ValueError("rho outside the unit disk")
    a = abs(idx.m)
    radial = np.polyval(_radial_coeffs(idx.n, a), rho)
    if idx.m >= 0:
        angular = np.cos(a * phi)
    else:
        angular = np.sin(a * phi)
    out = _noll_norm(idx.n, idx.m) * radial * angular
    return out if out.ndim else float(out)


@lru_cache(maxsize=None)
def _cartesian_coeffs(n: int, m: int) -> np.ndarray:
    """Z_n^m as a polynomial in (x, y): C[i, k] holds the x^i y^k term.

    Built exactly from ``rho^(n-2s) * cos/sin(|m| phi)`` terms rewritten as
    Re/Im[(x+iy)^|m|] * (x^2+y^2)^t, which keeps integer arithmetic until the
    final normalization.
    """
    a = abs(m)
    # Angular factor Re[(x+iy)^a] (cos) or Im[(x+iy)^a] (sin).
    ang = np.zeros((a + 1, a + 1))
    for t in range(a + 1):
        b = math.comb(a, t)
        if m >= 0 and t % 2 == 0:
            ang[a - t, t] = b * (-1.0) ** (t // 2)
        elif m < 0 and t % 2 == 1:
            ang[a - t, t] = b * (-1.0) ** ((t - 1) // 2)
    if a == 0:
        ang[0, 0] = 1.0

    radial = _radial_coeffs(n, a)
    out = np.zeros((n + 1, n + 1))
    for power in range(n + 1):          # power of rho with coefficient c
        c = radial[n - power]
        if c == 0.0 or (power - a) % 2 != 0 or power < a:
            continue
        t = (power - a) // 2            # (x^2 + y^2)^t factor
        ring = np.zeros((2 * t + 1, 2 * t + 1))
        for u in range(t + 1):
            ring[2 * (t - u), 2 * u] = math.comb(t, u)
        term = _poly2d_mul(ang, ring)
        out[:term.shape[0], :term.shape[1]] += c * term
    out *= _noll_norm(n, m)
    out.flags.writeable = False
    return out


def _poly2d_mul(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    out = np.zeros((p.shape[0] + q.shape[0] - 1, p.shape[1] + q.shape[1] - 1))
    for i in range(p.shape[0]):
        for k in range(p.shape[1]):
            if p[i, k] != 0.0:
                out[i:i + q.shape[0], k:k + q.shape[1]] += p[i, k] * q
    return out


def zernike_gradient(idx: ZernikeIndex, x, y):
    """Cartesian gradient (dZ/dx, dZ/dy) at unit-disk coordinates.

    Evaluated from the exact polynomial representation of Z_n^m, so it is
    smooth everywhere including the origin. Points must satisfy
    x^2 + y^2 <= 1.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x * x + y * y > 1.0 + 1e-12):
        raise ValueError("point outside the unit disk")
    return gradient_unchecked(idx, x, y)


def gradient_unchecked(idx: ZernikeIndex, x, y):
    """Gradient of the polynomial continuation of Z_n^m, any (x, y).

    The polynomials extend smoothly beyond the unit disk; sensor code uses
    this to average gradients over sub-apertures that straddle the analysis
    circle.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    c = _cartesian_coeffs(idx.n, idx.m)
    cx = (c[1:, :].T * np.arange(1, c.shape[0])).T   # d/dx
    cy = c[:, 1:] * np.arange(1, c.shape[1])         # d/dy
    dzdx = np.polynomial.polynomial.polyval2d(x, y, cx) if cx.size else 0.0 * x
    dzdy = np.polynomial.polynomial.polyval2d(x, y, cy) if cy.size else 0.0 * x
    if np.ndim(dzdx) == 0:
        return float(dzdx), float(dzdy)
    return dzdx, dzdy


@dataclass(frozen=True)
class ZernikeSpectrum:
    """Ordered modal coefficients a_j (radians) over a disk of given radius."""

    coefficients: tuple[tuple[int, float], ...]
    aperture_radius: float

    def __post_init__(self):
        if not self.aperture_radius > 0:
            raise ValueError("aperture_radius must be > 0")
        coeffs = tuple(sorted((int(j), float(a))
                              for j, a in self.coefficients))
        js = [j for j, _ in coeffs]
        if any(j < 1 for j in js):
            raise ValueError("scalar indices must be >= 1")
        if len(set(js)) != len(js):
            raise ValueError("duplicate scalar index in spectrum")
        object.__setattr__(self, "coefficients", coeffs)

    @classmethod
    def from_dict(cls, coeffs: Mapping[int, float],
                  aperture_radius: float) -> "ZernikeSpectrum":
        return cls(tuple(coeffs.items()), aperture_radius)

    def as_dict(self) -> dict[int, float]:
        return dict(self.coefficients)

    def coefficient(self, j: int) -> float:
        return self.as_dict().get(j, 0.0)


@dataclass(frozen=True)
class PhaseScreen:
    """A thin slab of accumulated phase in radians on a grid."""

    grid: Grid
    phase: np.ndarray
    label: str = ""

    def __post_init__(self):
        ph = np.asarray(self.phase, dtype=float)
        n = self.grid.n_samples
        if ph.shape != (n, n):
            raise ValueError(
                f"phase shape {ph.shape} does not match grid {n}x{n}")
        if not np.all(np.isfinite(ph)):
            raise ValueError("phase contains non-finite samples")
        ph = ph.copy()
        ph.flags.writeable = False
        object.__setattr__(self, "phase", ph)


def phase_from_spectrum(spec: ZernikeSpectrum, grid: Grid,
                        label: str = "",
                        rim_taper: float = 0.0) -> PhaseScreen:
    """Render the truncated modal sum onto a grid; zero outside the aperture.

    The sum is linear in the coefficients and the aperture disk must fit
    inside the grid extent. With the default ``rim_taper = 0`` the phase
    cuts off hard at the aperture edge. A positive ``rim_taper`` (fraction
    of the radius) instead rolls the phase smoothly to zero across the outer
    rim; split-step propagation uses this so the screen's complex
    exponential stays band-limited, at the cost of attenuating the modes in
    the rim band.
    """
    r_ap = spec.aperture_radius
    if r_ap > grid.extent / 2:
        raise ValueError(
            f"aperture radius {r_ap} exceeds half extent {grid.extent / 2}")
    if not 0.0 <= rim_taper < 1.0:
        raise ValueError("rim_taper must be in [0, 1)")
    x, y = grid.mesh()
    rho = np.hypot(x, y) / r_ap
    inside = rho <= 1.0
    phi = np.arctan2(y, x)
    phase = np.zeros_like(rho)
    rho_in = rho[inside]
    phi_in = phi[inside]
    for j, a in spec.coefficients:
        if a == 0.0:
            continue
        phase[inside] += a * zernike_eval(nm_from_index(j), rho_in, phi_in)
    if rim_taper > 0.0:
        from scipy.special import erf
        roll = 0.5 * (1.0 - erf((rho_in - (1.0 - rim_taper / 2.0))
                                / (rim_taper / 5.0)))
        phase[inside] *= roll
    return PhaseScreen(grid, phase, label)


def sample_modal_screen(stats: Mapping[int, float], aperture_radius: float,
                        grid: Grid, seed: int,
                        label: str = "modal",
                        rim_taper: float = 0.0) -> tuple[PhaseScreen,
                                                         ZernikeSpectrum]:
    """Draw a random phase screen from per-mode coefficient deviations.

    Each a_j is an independent zero-mean Gaussian with the given standard
    deviation (radians), drawn from its own (seed, j)-keyed stream so the
    result does not depend on dict ordering. Piston (j = 1) is unobservable
    in slope data and is rejected. Returns both the rendered screen and the
    ground-truth spectrum.
    """
    if 1 in stats:
        raise ValueError("piston (j=1) cannot appear in screen statistics")
    coeffs = {}
    for j in sorted(stats):
        if j < 2:
            raise ValueError(f"invalid mode index {j} in screen statistics")
        sigma = float(stats[j])
        if sigma < 0:
            raise ValueError(f"negative sigma for j={j}")
        rng = substream(seed, TAG_COEFF, j)
        coeffs[j] = rng.normal(0.0, sigma) if sigma > 0 else 0.0
    spectrum = ZernikeSpectrum.from_dict(coeffs, aperture_radius)
    screen = phase_from_spectrum(spectrum, grid, label, rim_taper=rim_taper)
    return screen, spectrum


def _cell_mean_psd(scale: float, kx: float, ky: float, df: float) -> float:
    """Average of the -11/3 power law over one df x df frequency cell.

    Near the origin the power law varies by orders of magnitude across a
    cell, so the midpoint value badly underweights it; a 16x16 midpoint
    subsample of the cell fixes that.
    """
    sub = (np.arange(16) + 0.5) / 16.0 - 0.5
    sx, sy = np.meshgrid(sub, sub, indexing="xy")
    cell = np.hypot(kx + sx, ky + sy) * df
    return scale * float(np.mean(cell ** (-11.0 / 3.0)))


def _cell_mode(scale: float, kx: float, ky: float, df: float,
               ) -> tuple[float, float, float]:
    """Moment-matched plane-wave surrogate for one frequency cell.

    Returns (variance, fx_eff, fy_eff): the cell's integrated spectral mass
    and its power-weighted RMS frequency components. Matching the second
    moments keeps the mode's structure-function contribution exact to
    quadratic order in the lag, which is the regime where these
    long-wavelength cells act.
    """
    sub = (np.arange(16) + 0.5) / 16.0 - 0.5
    sx, sy = np.meshgrid(sub, sub, indexing="xy")
    fxs = (kx + sx) * df
    fys = (ky + sy) * df
    w = scale * np.hypot(fxs, fys) ** (-11.0 / 3.0)
    mass = float(np.mean(w)) * df * df
    wsum = float(np.sum(w))
    fx_eff = math.copysign(math.sqrt(float(np.sum(w * fxs**2)) / wsum), kx)
    fy_eff = math.copysign(math.sqrt(float(np.sum(w * fys**2)) / wsum), ky)
    return mass, fx_eff, fy_eff


def _hole_gradient_moment(scale: float, half: float) -> float:
    """Per-axis second moment of the power law over the square |fx|,|fy|<half.

    Computed as the analytic integral over the inscribed disk plus a
    numerical remainder for the corners (where the integrand is regular).
    """
    disk = 3.0 * math.pi * scale * half ** (1.0 / 3.0)
    sub = (np.arange(64) + 0.5) / 64.0 - 0.5
    sx, sy = np.meshgrid(sub, sub, indexing="xy")
    fxs = 2.0 * half * sx
    fys = 2.0 * half * sy
    fr = np.hypot(fxs, fys)
    corner = (fr > half) & (fr > 0)
    w = scale * fr[corner] ** (-11.0 / 3.0)
    cell_area = (2.0 * half / 64.0) ** 2
    return disk + float(np.sum(w * fxs[corner] ** 2)) * cell_area


def kolmogorov_screen(r0: float, grid: Grid, seed: int,
                      label: str = "kolmogorov",
                      subharmonic_levels: int = 0) -> PhaseScreen:
    """FFT-filtered Gaussian noise with Kolmogorov phase statistics.

    The spectral density is 0.023 * r0^(-5/3) * f^(-11/3) (f in cycles/m),
    the pairing that yields the structure function 6.88 * (r/r0)^(5/3). The
    zero-frequency bin is removed.

    By default no subharmonic enhancement is applied: frequencies below half
    the grid resolution 1/extent are then absent, which suppresses tip/tilt
    power and leaves the measured structure function roughly
    (r/extent)^(1/3) below the 6.88 law even at separations of order r0.
    Passing ``subharmonic_levels=k`` completes the low-frequency end with
    moment-matched plane-wave modes: the ring of cells around DC plus k
    nested 3x3 refinements of the DC hole, each mode carrying its cell's
    integrated power at the power-weighted RMS frequency. This recovers the
    6.88 law to a few percent for k >= 2 on grids a few tens of r0 wide; it
    also raises the total screen variance, which is dominated by the lowest
    represented frequencies.
    """
    if not r0 > 0:
        raise ValueError(f"Fried parameter must be > 0, got {r0}")
    if subharmonic_levels < 0:
        raise ValueError("subharmonic_levels must be >= 0")
    n = grid.n_samples
    df = 1.0 / grid.extent
    f = np.fft.fftfreq(n, d=grid.spacing)
    fx, fy = np.meshgrid(f, f, indexing="xy")
    fr = np.hypot(fx, fy)
    fr[0, 0] = np.inf                       # kill DC before the power law
    scale = 0.023 * r0 ** (-5.0 / 3.0)
    psd = scale * fr ** (-11.0 / 3.0)
    for kx in range(-4, 5):
        for ky in range(-4, 5):
            if kx == 0 and ky == 0:
                continue
            psd[ky % n, kx % n] = _cell_mean_psd(scale, kx, ky, df)
    if subharmonic_levels > 0:
        # Ring-1 lattice cells are steep enough that a fixed on-lattice
        # frequency misplaces their second moment; hand them to the
        # moment-matched synthesis below instead.
        for kx in (-1, 0, 1):
            for ky in (-1, 0, 1):
                psd[ky % n, kx % n] = 0.0
    rng = substream(seed, TAG_COEFF)
    noise = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    spectrum = noise * np.sqrt(psd) * df
    phase = np.real(np.fft.ifft2(spectrum)) * n * n

    if subharmonic_levels > 0:
        cells = [(kx, ky, df) for kx in (-1, 0, 1) for ky in (-1, 0, 1)
                 if (kx, ky) != (0, 0)]
        for level in range(1, subharmonic_levels + 1):
            dfl = df / 3.0 ** level
            cells += [(kx, ky, dfl) for kx in (-1, 0, 1) for ky in (-1, 0, 1)
                      if (kx, ky) != (0, 0)]
        coords = np.arange(n) * grid.spacing     # same origin as the IFFT
        for kx, ky, dfc in cells:
            var, fx_eff, fy_eff = _cell_mode(scale, kx, ky, dfc)
            c = math.sqrt(var) * (rng.standard_normal()
                                  + 1j * rng.standard_normal())
            ex = np.exp(2j * np.pi * fx_eff * coords)
            ey = np.exp(2j * np.pi * fy_eff * coords)
            phase = phase + np.real(c * ey[:, None] * ex[None, :])
        # The hole left below the deepest level acts as a pure random tilt
        # at any lag well inside the grid; close it with a tilt whose
        # per-axis gradient variance equals the hole's exactly (its total
        # variance diverges, but that is all piston).
        half = df / (2.0 * 3.0 ** subharmonic_levels)
        grad_var = (2.0 * math.pi) ** 2 * _hole_gradient_moment(scale, half)
        gx = math.sqrt(grad_var) * rng.standard_normal()
        gy = math.sqrt(grad_var) * rng.standard_normal()
        phase = phase + gx * coords[None, :] + gy * coords[:, None]

    return PhaseScreen(grid, phase, label)


def radians_to_waves(a_rad: float) -> float:
    return a_rad / (2.0 * math.pi)


def waves_to_radians(a_waves: float) -> float:
    return a_waves * 2.0 * math.pi


def radians_to_um(a_rad: float, wavelength: float) -> float:
    """Phase in radians -> optical path in micrometers."""
    return a_rad * wavelength / (2.0 * math.pi) * 1e6


def um_to_radians(a_um: float, wavelength: float) -> float:
    return a_um * 1e-6 * 2.0 * math.pi / wavelength
