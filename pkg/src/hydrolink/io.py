"""Deterministic file outputs: 16-bit PGM images and CSV tables.

Every writer produces byte-identical output for identical inputs: no
timestamps, fixed float formatting (shortest round-trip repr via %.17g),
LF newlines, RFC-4180-style quoting.
"""

from __future__ import annotations

import csv
import hashlib
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .field import ComplexField
from .zernike import PhaseScreen, ZernikeSpectrum, nm_from_index


def fmt(value) -> str:
    """Canonical text form for one CSV cell."""
    if isinstance(value, float):
        return format(value, ".17g")
    if isinstance(value, (np.floating,)):
        return format(float(value), ".17g")
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def write_csv(path: Path | str, header: Sequence[str],
              rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
    return path


def write_pgm16(path: Path | str, intensity: np.ndarray,
                vmax: float | None = None) -> Path:
    """Write a 16-bit big-endian binary PGM of a non-negative image."""
    arr = np.asarray(intensity, dtype=float)
    if arr.ndim != 2:
        raise ValueError("PGM export needs a 2-D array")
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ValueError("PGM export needs finite non-negative values")
    top = float(arr.max()) if vmax is None else float(vmax)
    scaled = np.zeros(arr.shape, dtype=">u2") if top <= 0 else \
        np.clip(arr / top * 65535.0, 0, 65535).astype(">u2")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n65535\n".encode())
        fh.write(scaled.tobytes())
    return path


def read_pgm16(path: Path | str) -> np.ndarray:
    """Read back a 16-bit binary PGM written by :func:`write_pgm16`."""
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5" or parts[2] != b"65535":
        raise ValueError(f"{path} is not a 16-bit binary PGM")
    width, height = (int(v) for v in parts[1].split())
    pixels = np.frombuffer(parts[3], dtype=">u2", count=width * height)
    return pixels.reshape(height, width).astype(np.uint16)


def field_to_csv(field: ComplexField, path: Path | str) -> Path:
    """Complex samples as rows (x_index, y_index, re, im)."""
    n = field.grid.n_samples
    amp = field.amplitude

    def rows():
        for iy in range(n):
            for ix in range(n):
                yield (ix, iy, amp[iy, ix].real, amp[iy, ix].imag)

    return write_csv(path, ("x_index", "y_index", "re", "im"), rows())


def field_to_pgm(field: ComplexField, path: Path | str) -> Path:
    return write_pgm16(path, field.intensity())


def screen_to_csv(screen: PhaseScreen, path: Path | str) -> Path:
    n = screen.grid.n_samples

    def rows():
        for iy in range(n):
            for ix in range(n):
                yield (ix, iy, screen.phase[iy, ix])

    return write_csv(path, ("x_index", "y_index", "phase_radians"), rows())


def screen_to_pgm(screen: PhaseScreen, path: Path | str) -> Path:
    """Phase map shifted to non-negative range for image export."""
    ph = screen.phase - screen.phase.min()
    return write_pgm16(path, ph)


def spectrum_to_csv(spectrum: ZernikeSpectrum, path: Path | str) -> Path:
    def rows():
        for j, a in spectrum.coefficients:
            idx = nm_from_index(j)
            yield (j, idx.n, idx.m, a)

    return write_csv(path, ("j", "n", "m", "a_j_radians"), rows())


def sha256_of(path: Path | str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
