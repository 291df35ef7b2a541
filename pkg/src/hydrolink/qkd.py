"""BB84 feasibility metrics for polarization and spatial-mode encodings.

Covers mutually unbiased basis construction, probability-of-detection
matrices (analytic for polarization, Monte Carlo over channel realizations
for orbital-angular-momentum modes), the sifted error rate, binary entropy,
the asymptotic two-dimensional key rate r = 1 - 2*h(Q), and the error-rate
threshold where that rate vanishes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Sequence

import numpy as np

from .channel import ChannelConfig, realize_screens, run_channel
from .field import (ANTIDIAGONAL, DIAGONAL, HORIZONTAL, VERTICAL,
                    ComplexField, Grid, JonesVector, lg_mode, mode_overlap,
                    superpose)
from .seeding import TAG_TRIAL, child_seed


def mub_overlap(a: JonesVector, b: JonesVector) -> float:
    """Projection probability |<a|b>|^2."""
    return abs(a.inner(b)) ** 2


@dataclass(frozen=True)
class PolarizationBasis:
    """One measurement basis: an orthogonal pair of polarization states."""

    name: str
    states: tuple[JonesVector, JonesVector]
    labels: tuple[str, str]

    def __post_init__(self):
        if mub_overlap(self.states[0], self.states[1]) > 1e-12:
            raise ValueError(f"basis {self.name!r} is not orthogonal")


RECTILINEAR = PolarizationBasis("rectilinear", (HORIZONTAL, VERTICAL),
                                ("H", "V"))
DIAGONAL_BASIS = PolarizationBasis("diagonal", (ANTIDIAGONAL, DIAGONAL),
                                   ("A", "D"))


@dataclass(frozen=True)
class PolarizationChannel:
    """Two-parameter perturbation: rotation by theta, depolarization q.

    With probability 1-q the state reaches the analyzer rotated by theta;
    with probability q the measurement outcome is uniformly random. This is
    a calibration device for reproducing a measured error rate, not a claim
    about the physical error mechanism: q = 2 * QBER inverts a measured
    sifted error rate when theta = 0.
    """

    theta: float = 0.0
    depolarization: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.depolarization <= 1.0:
            raise ValueError("depolarization must be in [0, 1]")

    def rotated(self, state: JonesVector) -> JonesVector:
        c, s = math.cos(self.theta), math.sin(self.theta)
        h, v = state.components
        return JonesVector((c * h - s * v, s * h + c * v))

    def outcome_probability(self, sent: JonesVector,
                            analyzer: JonesVector) -> float:
        coherent = mub_overlap(self.rotated(sent), analyzer)
        q = self.depolarization
        return (1.0 - q) * coherent + q * 0.5


def polarization_channel(theta: float = 0.0,
                         depolarization: float = 0.0) -> PolarizationChannel:
    return PolarizationChannel(theta=theta, depolarization=depolarization)


def channel_for_qber(qber: float) -> PolarizationChannel:
    """Depolarization-only channel calibrated to a target sifted error rate."""
    if not 0.0 <= qber <= 0.5:
        raise ValueError("qber must be in [0, 0.5]")
    return PolarizationChannel(theta=0.0, depolarization=2.0 * qber)


@dataclass(frozen=True)
class DetectionMatrix:
    """P(measured | sent) with rows conditioned on the receiver's basis.

    ``bases`` groups the labels into measurement bases; within each basis
    block every row sums to 1 (to 1e-9), so the matrix is conditionally
    stochastic. ``standard_errors`` accompanies Monte Carlo estimates.
    """

    sent_labels: tuple[str, ...]
    measured_labels: tuple[str, ...]
    probabilities: np.ndarray
    bases: tuple[tuple[str, ...], ...]
    standard_errors: np.ndarray | None = None

    def __post_init__(self):
        probs = np.asarray(self.probabilities, dtype=float)
        shape = (len(self.sent_labels), len(self.measured_labels))
        if probs.shape != shape:
            raise ValueError(f"probabilities shape {probs.shape} != {shape}")
        if np.any(probs < -1e-12) or np.any(probs > 1.0 + 1e-12):
            raise ValueError("probabilities outside [0, 1]")
        flat = [lbl for basis in self.bases for lbl in basis]
        if sorted(flat) != sorted(self.measured_labels):
            raise ValueError("bases must partition the measured labels")
        for basis in self.bases:
            cols = [self.measured_labels.index(lbl) for lbl in basis]
            sums = probs[:, cols].sum(axis=1)
            if np.any(np.abs(sums - 1.0) > 1e-9):
                raise ValueError(
                    f"rows are not normalized within basis {basis}")
        probs = probs.copy()
        probs.flags.writeable = False
        object.__setattr__(self, "probabilities", probs)
        if self.standard_errors is not None:
            se = np.asarray(self.standard_errors, dtype=float)
            if se.shape != shape:
                raise ValueError("standard_errors shape mismatch")
            se = se.copy()
            se.flags.writeable = False
            object.__setattr__(self, "standard_errors", se)

    def basis_of(self, label: str) -> tuple[str, ...]:
        for basis in self.bases:
            if label in basis:
                return basis
        raise KeyError(label)

    def probability(self, sent: str, measured: str) -> float:
        return float(self.probabilities[self.sent_labels.index(sent),
                                        self.measured_labels.index(measured)])


def detection_matrix_polarization(
        channel: PolarizationChannel) -> DetectionMatrix:
    """Analytic 4x4 matrix over sent/measured {H, V, A, D}.

    Each entry is the projection probability conditioned on the receiver
    choosing the basis that contains the measured state.
    """
    bases = (RECTILINEAR, DIAGONAL_BASIS)
    labels = tuple(lbl for b in bases for lbl in b.labels)
    states = {lbl: s for b in bases for lbl, s in zip(b.labels, b.states)}
    probs = np.array([[channel.outcome_probability(states[s], states[m])
                       for m in labels] for s in labels])
    return DetectionMatrix(sent_labels=labels, measured_labels=labels,
                           probabilities=probs,
                           bases=tuple(b.labels for b in bases))


def _oam_bases(ell_values: Sequence[int], include_superposition: bool,
               waist: float, grid: Grid, wavelength: float,
               ) -> tuple[tuple[tuple[str, ...], ...],
                          dict[str, ComplexField]]:
    ells = sorted(set(int(e) for e in ell_values))
    if len(ells) != len(ell_values):
        raise ValueError("ell values must be distinct")
    modes = {}
    primary = []
    for ell in ells:
        label = f"l{ell:+d}"
        modes[label] = lg_mode(ell, 0, waist, grid, wavelength)
        primary.append(label)
    bases = [tuple(primary)]
    if include_superposition:
        if len(ells) != 2:
            raise ValueError(
                "superposition basis needs exactly two ell values")
        a, b = (modes[p] for p in primary)
        s = 1.0 / math.sqrt(2.0)
        sup = []
        for sign, tag in ((1.0, "s+"), (-1.0, "s-")):
            modes[tag] = superpose([a, b], [s, sign * s])
            sup.append(tag)
        bases.append(tuple(sup))
    return tuple(bases), modes


def detection_matrix_oam(channel_config: ChannelConfig,
                         ell_values: Sequence[int],
                         include_superposition_basis: bool = False,
                         waist: float | None = None,
                         grid: Grid | None = None,
                         wavelength: float = 532e-9,
                         n_trials: int = 100) -> DetectionMatrix:
    """Monte Carlo crosstalk matrix for orbital-angular-momentum encoding.

    Every trial realizes one deterministic channel (seeded from the config
    seed and the trial index), sends each basis state through it, projects
    the received field onto every basis state, and renormalizes within each
    measurement basis (ideal projective mode sorting, post-selected on
    detection). The ensemble mean and its standard error are returned.
    """
    if grid is None:
        grid = Grid(256, 4e-5)
    if waist is None:
        waist = grid.extent / 16.0
    max_ell = max(abs(int(e)) for e in ell_values)
    ring = waist * math.sqrt(max(max_ell, 1) / 2.0)
    if 2.0 * math.pi * ring / grid.spacing < 8.0 * max(max_ell, 1):
        raise ValueError(
            f"grid cannot resolve the azimuthal structure of |l|={max_ell}")
    bases, modes = _oam_bases(ell_values, include_superposition_basis,
                              waist, grid, wavelength)
    labels = tuple(lbl for b in bases for lbl in b)
    cols = {lbl: i for i, lbl in enumerate(labels)}

    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    acc = np.zeros((len(labels), len(labels)))
    acc2 = np.zeros_like(acc)
    for trial in range(n_trials):
        cfg = channel_config.with_seed(
            child_seed(channel_config.seed, TAG_TRIAL, trial))
        if cfg.n_screens > 0 and cfg.screen_source != "explicit":
            # One frozen channel realization per trial, shared by all
            # sent states.
            screens, _ = realize_screens(cfg, grid)
            cfg = replace(cfg, screen_source="explicit", screens=screens,
                          modal_sigmas=None, r0=None)
        row_block = np.zeros_like(acc)
        for s_lbl in labels:
            received = run_channel(modes[s_lbl], cfg).output_field
            for basis in bases:
                raw = np.array([abs(mode_overlap(received, modes[m])) ** 2
                                for m in basis])
                tot = raw.sum()
                if tot <= 0.0:
                    raw = np.full(len(basis), 1.0 / len(basis))
                    tot = 1.0
                for m_lbl, p in zip(basis, raw / tot):
                    row_block[cols[s_lbl], cols[m_lbl]] = p
        acc += row_block
        acc2 += row_block**2
    mean = acc / n_trials
    if n_trials > 1:
        var = (acc2 - n_trials * mean**2) / (n_trials - 1)
        stderr = np.sqrt(np.clip(var, 0.0, None) / n_trials)
    else:
        stderr = np.zeros_like(mean)
    # Renormalize the ensemble mean exactly within each basis block.
    for basis in bases:
        idx = [cols[m] for m in basis]
        mean[:, idx] /= mean[:, idx].sum(axis=1, keepdims=True)
    return DetectionMatrix(sent_labels=labels, measured_labels=labels,
                           probabilities=mean, bases=bases,
                           standard_errors=stderr)


def qber_from_matrix(matrix: DetectionMatrix) -> float:
    """Sifted error rate: mean wrong-outcome probability, matched bases only."""
    errs = []
    for s in matrix.sent_labels:
        basis = matrix.basis_of(s)
        total = math.fsum(matrix.probability(s, m) for m in basis)
        wrong = math.fsum(matrix.probability(s, m) for m in basis if m != s)
        errs.append(wrong / total)
    return math.fsum(errs) / len(errs)


def binary_entropy(p: float) -> float:
    """h(p) = -p log2 p - (1-p) log2 (1-p), with h(0) = h(1) = 0."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability outside [0, 1]: {p}")
    if p == 0.0 or p == 1.0:
        return 0.0
    return -p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p)


def bb84_key_rate(qber: float) -> float:
    """Asymptotic 2-d BB84 secret fraction max(0, 1 - 2*h(Q)) per sifted photon."""
    if not 0.0 <= qber <= 0.5:
        raise ValueError(f"qber outside [0, 0.5]: {qber}")
    return max(0.0, 1.0 - 2.0 * binary_entropy(qber))


@lru_cache(maxsize=1)
def qber_threshold() -> float:
    """Error rate where the 2-d BB84 key rate reaches zero (~11.0%).

    Root of 1 - 2*h(Q) on (0, 0.5), located by bisection to 1e-6.
    """
    lo, hi = 1e-9, 0.5 - 1e-9
    while hi - lo > 1e-6:
        mid = 0.5 * (lo + hi)
        if 1.0 - 2.0 * binary_entropy(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class QkdReport:
    """Summary of a BB84 feasibility evaluation."""

    qber: float
    key_rate: float
    threshold_margin: float
    sifted_fraction: float

    def __post_init__(self):
        if not 0.0 <= self.qber <= 1.0:
            raise ValueError("qber outside [0, 1]")

    def feasible(self) -> bool:
        return self.threshold_margin > 0.0


def report_from_matrix(matrix: DetectionMatrix) -> QkdReport:
    """Derive QBER, key rate, threshold margin and sifted fraction.

    The sifted fraction assumes sender and receiver pick among the bases
    uniformly and independently.
    """
    q = qber_from_matrix(matrix)
    rate = bb84_key_rate(min(q, 0.5))
    return QkdReport(qber=q, key_rate=rate,
                     threshold_margin=qber_threshold() - q,
                     sifted_fraction=1.0 / len(matrix.bases))
