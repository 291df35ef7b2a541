import numpy as np
import pytest

from hydrolink.field import Grid, lg_mode

WAVELENGTH = 532e-9
WATER_N = 1.33


@pytest.fixture(scope="session")
def grid512():
    return Grid(512, 20e-6)


@pytest.fixture(scope="session")
def grid256():
    return Grid(256, 4e-5)


@pytest.fixture(scope="session")
def gaussian512(grid512):
    return lg_mode(0, 0, grid512.extent / 16, grid512, WAVELENGTH)


def rayleigh_range(waist, refractive_index=WATER_N, wavelength=WAVELENGTH):
    return np.pi * waist**2 * refractive_index / wavelength
