"""Shared test utilities: synthetic bases and spectral-domain samplers."""

import numpy as np

from halfspec.specmodel import SpectralBasis


def toy_basis(K, seed=0, scale=1.0):
    """Random orthonormal loadings (times scale) over K frequencies."""
    rng = np.random.default_rng(seed)
    u0 = rng.standard_normal(K) * 0.3
    mats = rng.standard_normal((K, 3))
    q, _ = np.linalg.qr(mats)
    return SpectralBasis(u0, scale * q[:, 0], scale * q[:, 1], scale * q[:, 2])


def spectral_sample(f_row, T, rng):
    """Half-spectrum draw with independent coefficients and E|Y|^2 = f."""
    K = T // 2 + 1
    coeffs = np.empty(K, dtype=complex)
    coeffs[0] = rng.standard_normal() * np.sqrt(f_row[0])
    for k in range(1, K):
        if T % 2 == 0 and k == K - 1:
            coeffs[k] = rng.standard_normal() * np.sqrt(f_row[k])
        else:
            coeffs[k] = (rng.standard_normal() + 1j * rng.standard_normal()) \
                * np.sqrt(f_row[k] / 2.0)
    return coeffs
