"""Per-pixel discrete Fourier transforms, periodograms, smoothing, summary maps.

Transform convention: coefficients are T^(-1/2) * sum_{t=1..T} Y(x,t) exp(-i w_k t)
with w_k = 2 pi k / T.  Only the half spectrum k = 0..floor(T/2) is kept; the
rest is implied by conjugate symmetry of real data.  numpy's rfft uses t = 0..T-1,
so a phase factor exp(-i w_k) is applied to match the t = 1..T convention.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .gridio import Grid, TimeCube, save_cube


@dataclass
class SpectralField:
    """Half-spectrum DFT coefficients for every pixel: complex (n, K), K = T//2 + 1."""

    grid: Grid
    T: int
    coeffs: np.ndarray

    def __post_init__(self):
        K = self.T // 2 + 1
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.shape != (self.grid.n, K):
            raise ValueError(f"coeffs must have shape ({self.grid.n}, {K})")
        self.coeffs = c

    @property
    def K(self) -> int:
        return self.T // 2 + 1


def real_frequencies(T: int) -> np.ndarray:
    """Boolean mask over half-spectrum indices that carry purely real coefficients."""
    K = T // 2 + 1
    mask = np.zeros(K, dtype=bool)
    mask[0] = True
    if T % 2 == 0:
        mask[K - 1] = True
    return mask


def conjugate_weights(T: int) -> np.ndarray:
    """Multiplicity of each half-spectrum frequency in the full spectrum (1 or 2)."""
    return np.where(real_frequencies(T), 1.0, 2.0)


def _phase(T: int) -> np.ndarray:
    w = 2.0 * np.pi * np.arange(T // 2 + 1) / T
    return np.exp(-1j * w)


def forward_dft_all(cube: TimeCube) -> SpectralField:
    """Batched half-spectrum DFT of every pixel's series."""
    T = cube.T
    y = np.asarray(cube.values, dtype=np.float64)
    coeffs = np.fft.rfft(y, axis=1) * (_phase(T) / np.sqrt(T))
    coeffs[:, real_frequencies(T)] = coeffs[:, real_frequencies(T)].real
    return SpectralField(cube.grid, T, coeffs)


def inverse_dft_all(field: SpectralField, T: int | None = None) -> TimeCube:
    """Invert forward_dft_all, imposing conjugate symmetry.

    Raises ValueError if the coefficients that must be real (k = 0 and the
    Nyquist term) carry an imaginary part above 1e-6 relative, which signals
    a corrupted half spectrum.
    """
    if T is None:
        T = field.T
    if T != field.T:
        raise ValueError("requested length does not match the field")
    coeffs = field.coeffs
    scale = np.abs(coeffs).max()
    resid = np.abs(coeffs[:, real_frequencies(T)].imag).max() if scale > 0 else 0.0
    if scale > 0 and resid > 1e-6 * scale:
        raise ValueError(
            f"imaginary residue {resid:.3g} exceeds 1e-6 of the field scale")
    y = np.fft.irfft(coeffs * np.conj(_phase(T)), n=T, axis=1) * np.sqrt(T)
    return TimeCube(field.grid, y.astype(np.float32))


def periodogram(field: SpectralField) -> np.ndarray:
    """Entrywise squared modulus of the coefficients, (n, K)."""
    c = field.coeffs
    return (c * np.conj(c)).real


@dataclass(frozen=True)
class SmoothingKernel:
    """Circular smoothing weights over the T frequencies, indexed by lag 0..T-1.

    Weights sum to 1 and are symmetric: w[l] == w[T - l].
    """

    weights: np.ndarray
    kind: str

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or np.any(w < 0):
            raise ValueError("weights must be a nonnegative vector")
        if not np.isclose(w.sum(), 1.0, atol=1e-12):
            raise ValueError("weights must sum to 1")
        if not np.allclose(w[1:], w[1:][::-1], atol=1e-12):
            raise ValueError("weights must be circularly symmetric")
        object.__setattr__(self, "weights", w)


def daniell_kernel(T: int, bandwidth: int) -> SmoothingKernel:
    """Centered moving average over 2*bandwidth + 1 frequencies, circular over T."""
    if bandwidth < 0 or 2 * bandwidth + 1 > T:
        raise ValueError("bandwidth must satisfy 0 <= 2b+1 <= T")
    w = np.zeros(T)
    lags = np.arange(-bandwidth, bandwidth + 1) % T
    w[lags] = 1.0 / (2 * bandwidth + 1)
    return SmoothingKernel(w, f"daniell({bandwidth})")


def exponential_kernel(T: int, rate: float = 100.0) -> SmoothingKernel:
    """Weights proportional to exp(rate * (cos w_l - 1)), normalized to sum 1."""
    w = np.exp(rate * (np.cos(2.0 * np.pi * np.arange(T) / T) - 1.0))
    return SmoothingKernel(w / w.sum(), "exponential")


def mirror_to_full(half: np.ndarray, T: int) -> np.ndarray:
    """Expand half-spectrum values to all T frequencies by conjugate symmetry."""
    idx = np.minimum(np.arange(T), T - np.arange(T))
    idx[0] = 0
    return np.asarray(half)[..., idx]


def smooth_periodogram_all(pgram: np.ndarray, kernel: SmoothingKernel, T: int) -> np.ndarray:
    """Smoothed spectral estimate including the 1/(2 pi) factor; rows are pixels."""
    full = mirror_to_full(np.atleast_2d(pgram), T)
    wf = np.fft.rfft(kernel.weights)
    smoothed = np.fft.irfft(np.fft.rfft(full, axis=1) * wf, n=T, axis=1)
    return smoothed[:, : T // 2 + 1] / (2.0 * np.pi)


def smooth_periodogram(pgram_row: np.ndarray, kernel: SmoothingKernel, T: int) -> np.ndarray:
    return smooth_periodogram_all(pgram_row[None, :], kernel, T)[0]


@dataclass
class SummaryMaps:
    """Per-pixel exploratory maps: mean, seasonal amplitude, deseasonalized SD,
    and the normalized one-step-ahead forecast SD (NaN where the SD is zero)."""

    mean_map: np.ndarray
    seasonal_map: np.ndarray
    sigma_tilde: np.ndarray
    norm_forecast_sd: np.ndarray


def summary_maps(field: SpectralField, kernel: SmoothingKernel) -> SummaryMaps:
    """Compute the four summary maps from the half-spectrum coefficients."""
    T = field.T
    if T < 5:
        raise ValueError("summary maps need T >= 5")
    K = field.K
    c = field.coeffs
    rt = np.sqrt(T)
    mean_map = c[:, 0].real / rt
    seasonal_map = 2.0 * c[:, 1].real / rt

    # full-spectrum sum over k = 2..T-2 via half-spectrum multiplicities
    w = conjugate_weights(T)
    w = w.copy()
    w[:2] = 0.0
    pg = periodogram(field)
    sigma2 = (pg * w).sum(axis=1) / (T - 3)
    sigma_tilde = np.sqrt(np.maximum(sigma2, 0.0))

    f_smooth = smooth_periodogram_all(pg, kernel, T)
    with np.errstate(divide="ignore"):
        logf = np.where(f_smooth > 0, np.log(np.where(f_smooth > 0, f_smooth, 1.0)), -np.inf)
    mean_logf = (logf * w).sum(axis=1) / T
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        fsd = np.sqrt(2.0 * np.pi * np.exp(mean_logf))
        nfsd = np.where(sigma_tilde > 0, fsd / np.where(sigma_tilde > 0, sigma_tilde, 1.0), np.nan)
    return SummaryMaps(mean_map, seasonal_map, sigma_tilde, nfsd)


def save_summary_maps(maps: SummaryMaps, grid: Grid, outdir: str | os.PathLike) -> None:
    """Dump the maps as four single-time-step cube files plus one CSV."""
    os.makedirs(outdir, exist_ok=True)
    named = [
        ("mean", maps.mean_map),
        ("seasonal", maps.seasonal_map),
        ("sigma_tilde", maps.sigma_tilde),
        ("norm_forecast_sd", maps.norm_forecast_sd),
    ]
    for name, values in named:
        filled = np.where(np.isfinite(values), values, np.float32(np.nan))
        # cube files reject NaN; encode missing values as a large sentinel
        filled = np.where(np.isfinite(filled), filled, 9.96921e36)
        save_cube(grid, TimeCube(grid, filled[:, None].astype(np.float32)),
                  os.path.join(outdir, f"{name}.cube"))
    lats = grid.pixel_latitudes()
    lons = grid.pixel_longitudes()
    with open(os.path.join(outdir, "summary_maps.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pixel", "lat", "lon"] + [name for name, _ in named])
        for p in range(grid.n):
            writer.writerow([p, lats[p], lons[p]] + [f"{vals[p]!r}" for _, vals in named])
