import numpy as np
import pytest

import paikit as pk


@pytest.fixture(scope="session")
def unit_square_32():
    return pk.Domain.rectangle((0.0, 0.0), (1.0, 1.0), 32)


@pytest.fixture(scope="session")
def unit_square_48():
    return pk.Domain.rectangle((0.0, 0.0), (1.0, 1.0), 48)


@pytest.fixture(scope="session")
def disk_inclusion():
    return pk.StarInclusion((0.45, 0.55), 0.22)


@pytest.fixture(scope="session")
def optics():
    return pk.OpticalCoefficients()


def eigenmode(domain, kx=1, ky=1):
    """First Dirichlet eigenpair of the unit square."""
    pts = domain.grid.coords
    u = np.sin(np.pi * kx * pts[:, 0]) * np.sin(np.pi * ky * pts[:, 1])
    lam = np.pi * np.sqrt(float(kx**2 + ky**2))
    return u, lam


def weighted_l2(domain, u):
    return float(np.sqrt((domain.disc.w_vol * u * u).sum()))
