"""Deterministic simulator of an underwater optical communication link.

Synthesizes structured laser beams (Laguerre-Gauss and superposition
modes), propagates them through an absorbing, turbulent water channel,
senses the received wavefront with a Shack-Hartmann model feeding a Zernike
modal fit, and evaluates BB84 quantum-key-distribution feasibility for
polarization and spatial-mode encodings.
"""

from .channel import (AliasingError, ChannelConfig, ChannelResult, Occluder,
                      angular_spectrum_propagate, apply_attenuation,
                      apply_occlusion, apply_phase_screen, run_channel,
                      transmittance)
from .field import (ANTIDIAGONAL, DEFAULT_WAVELENGTH, DIAGONAL, HORIZONTAL,
                    VERTICAL, ComplexField, Grid, GridMismatchError,
                    JonesVector, Vortex, beam_width, centroid, find_vortices,
                    gaussian_mode, lg_mode, mode_overlap, petal_mode,
                    superpose, total_power, total_vortex_charge)
from .qkd import (DetectionMatrix, PolarizationBasis, PolarizationChannel,
                  QkdReport, bb84_key_rate, binary_entropy, channel_for_qber,
                  detection_matrix_oam, detection_matrix_polarization,
                  mub_overlap, polarization_channel, qber_from_matrix,
                  qber_threshold, report_from_matrix)
from .scenario import (Scenario, ScenarioError, bundled_scenarios,
                       load_scenario, parse_scenario, schema_reference)
from .runner import RunResult, run_scenario, sweep
from .shack_hartmann import (LensletArray, ModalAverage, SlopeField,
                             SpotImage, WfsResult, average_magnitudes,
                             capture, extract_slopes, fit_aperture_radius,
                             modal_fit, reconstruct_wavefront, spot_mosaic)
from .zernike import (PhaseScreen, ZernikeIndex, ZernikeSpectrum,
                      index_from_nm, kolmogorov_screen, nm_from_index,
                      phase_from_spectrum, radians_to_um, radians_to_waves,
                      sample_modal_screen, um_to_radians, waves_to_radians,
                      zernike_eval, zernike_gradient)

__version__ = "0.1.0"
