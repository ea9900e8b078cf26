"""Semiparametric time-series model: global mean, log-spectrum basis, Whittle fits.

The log spectral density at pixel x is modeled as

    log f(w; x) = u0(w) + theta_1(x) u1(w) + theta_2(x) u2(w) + theta_3(x) u3(w)

where u0 is the log pixel-average periodogram and u1..u3 are principal
components of smoothed, normalized log periodograms.  theta(x) is fit per
pixel by maximizing the Whittle likelihood; the objective is strictly
concave in theta so Newton iterations converge fast.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import (
    SpectralField,
    conjugate_weights,
    exponential_kernel,
    mirror_to_full,
    periodogram,
)


class WhittleConvergenceError(RuntimeError):
    """Raised when Newton iterations fail; carries the last iterate."""

    def __init__(self, message, last_iterate):
        super().__init__(message)
        self.last_iterate = last_iterate


@dataclass(frozen=True)
class MeanModel:
    """Global mean mu0 plus complex seasonal amplitude mu1 at the annual frequency."""

    mu0: float
    mu1: complex


@dataclass
class SpectralBasis:
    """Log-spectrum basis over half-spectrum frequencies: u0 plus three loadings."""

    u0: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    u3: np.ndarray

    def __post_init__(self):
        for name in ("u0", "u1", "u2", "u3"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.ndim != 1 or not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be a finite 1-D vector")
            setattr(self, name, v)
        if not (self.u0.size == self.u1.size == self.u2.size == self.u3.size):
            raise ValueError("basis vectors must share a length")

    @property
    def K(self) -> int:
        return self.u0.size

    def loadings(self) -> np.ndarray:
        """The (K, 3) matrix of theta loadings."""
        return np.column_stack([self.u1, self.u2, self.u3])


def estimate_mean(field: SpectralField, weights: np.ndarray) -> MeanModel:
    """Weighted pixel averages of the k = 0 and k = 1 coefficients (T^{-1/2} scale)."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (field.grid.n,):
        raise ValueError("weights must have one entry per pixel")
    w = w / w.sum()
    rt = np.sqrt(field.T)
    mu0 = float(np.dot(w, field.coeffs[:, 0].real) / rt)
    mu1 = complex(np.dot(w, field.coeffs[:, 1]) / rt)
    return MeanModel(mu0, mu1)


def remove_mean(field: SpectralField, mean: MeanModel) -> SpectralField:
    """Subtract the global mean contributions from the k = 0, 1 coefficients."""
    coeffs = field.coeffs.copy()
    rt = np.sqrt(field.T)
    coeffs[:, 0] -= rt * mean.mu0
    coeffs[:, 1] -= rt * mean.mu1
    return SpectralField(field.grid, field.T, coeffs)


def add_mean(field: SpectralField, mean: MeanModel) -> SpectralField:
    coeffs = field.coeffs.copy()
    rt = np.sqrt(field.T)
    coeffs[:, 0] += rt * mean.mu0
    coeffs[:, 1] += rt * mean.mu1
    return SpectralField(field.grid, field.T, coeffs)


def compute_u0(field: SpectralField) -> np.ndarray:
    """log of the pixel-average periodogram at each half-spectrum frequency."""
    avg = periodogram(field).mean(axis=0)
    if np.any(avg <= 0.0):
        bad = int(np.argmin(avg))
        raise ValueError(f"average periodogram vanishes at frequency index {bad}")
    return np.log(avg)


def smoothed_normalized_logpgram(field: SpectralField, u0: np.ndarray) -> np.ndarray:
    """g(w_k, x): log of the kernel-smoothed periodogram/exp(u0) ratio, (n, K).

    The smoothing kernel is exp(100 (cos w - 1)) normalized to unit mass,
    applied circularly over the full mirrored spectrum.
    """
    T = field.T
    kernel = exponential_kernel(T)
    ratio = periodogram(field) / np.exp(np.asarray(u0))[None, :]
    full = mirror_to_full(ratio, T)
    wf = np.fft.rfft(kernel.weights)
    smoothed = np.fft.irfft(np.fft.rfft(full, axis=1) * wf, n=T, axis=1)
    smoothed = np.maximum(smoothed[:, : T // 2 + 1], 1e-300)
    return np.log(smoothed)


def principal_components(g: np.ndarray,
                         pixel_weights: np.ndarray | None = None
                         ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """First three principal loadings (over frequencies) of g across pixels.

    Columns are centered across pixels; loadings are ordered by decreasing
    eigenvalue, unit-norm, with the largest-magnitude entry made positive.
    pixel_weights, when given, weight the pixels in the covariance.
    """
    g = np.asarray(g, dtype=float)
    n, K = g.shape
    if n < 4:
        raise ValueError("need at least 4 pixels for three components")
    if pixel_weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(pixel_weights, float)
        w = w / w.sum()
    centered = g - (w @ g)[None, :]
    cov = centered.T @ (centered * w[:, None])
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals, eigvecs = eigvals[order], eigvecs[:, order]
    tol = max(K, n) * np.finfo(float).eps * max(eigvals[0], 0.0)
    if eigvals[0] <= 0.0 or np.sum(eigvals > tol) < 3:
        raise ValueError("centered g has rank < 3; cannot extract three components")
    out = []
    for j in range(3):
        v = eigvecs[:, j]
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        out.append(v)
    return tuple(out)


def build_basis(field: SpectralField,
                pixel_weights: np.ndarray | None = None) -> SpectralBasis:
    """u0 plus the three principal components of the smoothed log ratios."""
    u0 = compute_u0(field)
    g = smoothed_normalized_logpgram(field, u0)
    u1, u2, u3 = principal_components(g, pixel_weights)
    return SpectralBasis(u0, u1, u2, u3)


def spectral_density(theta: np.ndarray, basis: SpectralBasis, k: int) -> float:
    """f(w_k) = exp(u0(w_k) + theta . (u1, u2, u3)(w_k))."""
    if not 0 <= k < basis.K:
        raise ValueError("frequency index out of range")
    t = np.asarray(theta, float)
    return float(np.exp(basis.u0[k] + basis.loadings()[k] @ t))


def log_spectra(theta: np.ndarray, basis: SpectralBasis) -> np.ndarray:
    """log f for one theta vector (K,) or a field of them ((n, 3) -> (n, K))."""
    t = np.atleast_2d(np.asarray(theta, float))
    out = basis.u0[None, :] + t @ basis.loadings().T
    return out[0] if np.asarray(theta).ndim == 1 else out


def fitted_spectra(theta: np.ndarray, basis: SpectralBasis) -> np.ndarray:
    return np.exp(log_spectra(theta, basis))


def _whittle_terms(T: int) -> tuple[slice, np.ndarray]:
    """Summation range (k >= 1) and conjugate multiplicities for the objective."""
    w = conjugate_weights(T)[1:]
    return slice(1, None), w


def whittle_objective(theta, pgram_row, basis, T):
    """Objective, gradient and Hessian of the per-pixel Whittle loglikelihood."""
    sl, w = _whittle_terms(T)
    U = basis.loadings()[sl]
    logf = basis.u0[sl] + U @ np.asarray(theta, float)
    ratio = pgram_row[sl] * np.exp(-logf)
    value = float(np.sum(w * (-logf - ratio)))
    grad = U.T @ (w * (ratio - 1.0))
    hess = -(U.T * (w * ratio)) @ U
    return value, grad, hess


def fit_theta_all(pgram: np.ndarray, basis: SpectralBasis, T: int,
                  grad_tol: float = 1e-8, max_iter: int = 100) -> np.ndarray:
    """Whittle maximizers for every pixel at once (damped Newton, (n, 3) output)."""
    pg = np.atleast_2d(np.asarray(pgram, float))
    n = pg.shape[0]
    sl, w = _whittle_terms(T)
    U = basis.loadings()[sl]
    u0 = basis.u0[sl]
    I = pg[:, sl]

    def value(theta):
        logf = u0[None, :] + theta @ U.T
        ratio = I * np.exp(-logf)
        return np.sum(w[None, :] * (-logf - ratio), axis=1)

    theta = np.zeros((n, 3))
    obj = value(theta)
    active = np.ones(n, dtype=bool)
    for _ in range(max_iter):
        logf = u0[None, :] + theta @ U.T
        ratio = I * np.exp(-logf)
        grad = (w[None, :] * (ratio - 1.0)) @ U
        gnorm = np.linalg.norm(grad, axis=1)
        active = gnorm >= grad_tol
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        curv = np.einsum("nk,kj,kl->njl", (w[None, :] * ratio)[idx], U, U)
        # guard against singular curvature on degenerate rows
        curv += 1e-12 * np.eye(3)[None, :, :]
        step = np.linalg.solve(curv, grad[idx][:, :, None])[:, :, 0]
        # accept within rounding noise: the objective is concave, so the
        # damped Newton step cannot truly decrease it
        tol = 1e-10 * (1.0 + np.abs(obj[idx]))
        scale = np.ones(len(idx))
        for _ in range(60):
            trial = theta[idx] + scale[:, None] * step
            tv = value_rows(trial, I[idx], u0, U, w)
            ok = np.isfinite(tv) & (tv >= obj[idx] - tol)
            if ok.all():
                break
            scale = np.where(ok, scale, scale * 0.5)
        theta[idx] = theta[idx] + scale[:, None] * step
        obj[idx] = value_rows(theta[idx], I[idx], u0, U, w)
    else:
        bad = np.nonzero(active)[0]
        raise WhittleConvergenceError(
            f"{bad.size} pixels did not reach gradient tolerance", theta)
    return theta


def value_rows(theta, I, u0, U, w):
    with np.errstate(over="ignore", invalid="ignore"):
        logf = u0[None, :] + theta @ U.T
        ratio = I * np.exp(-logf)
        return np.sum(w[None, :] * (-logf - ratio), axis=1)


def fit_theta_whittle(pgram_row: np.ndarray, basis: SpectralBasis, T: int,
                      grad_tol: float = 1e-8, max_iter: int = 100) -> np.ndarray:
    """Whittle maximizer for one pixel's periodogram row."""
    return fit_theta_all(pgram_row[None, :], basis, T, grad_tol, max_iter)[0]
