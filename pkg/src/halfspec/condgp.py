"""Per-frequency complex Gaussian conditioning: kriging, simulation, likelihoods.

At each frequency the scaled coefficient map Z = Y / sqrt(f) over vertices is
modeled as CN(0, Q(kappa)^{-1}) (real Gaussian at the mean and Nyquist
frequencies).  Conditioning on a stored subset uses the precision blocks:

    E[Z2 | Z1]   = -Q22^{-1} Q21 Z1
    Var[Z2 | Z1] =  Q22^{-1}

All operations are per-frequency; nothing here couples frequencies.
kappa-independent additive constants are dropped from every loglikelihood,
consistently across kappa values, so values are comparable only within one
frequency.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize_scalar

from .spde import CholeskyFactor, SparsePrecision, SpdeOperator, factorize

KAPPA_BOUNDS = (1e-3, 1e3)
PINNED_KAPPA = 0.01


@dataclass(frozen=True)
class FrequencyPartition:
    """Stored/unstored split of the vertex set at one frequency."""

    k: int
    stored: np.ndarray
    unstored: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.stored, dtype=np.int64)
        u = np.asarray(self.unstored, dtype=np.int64)
        if s.size and (np.any(np.diff(s) <= 0)):
            raise ValueError("stored indices must be sorted and unique")
        if np.intersect1d(s, u).size:
            raise ValueError("stored and unstored sets overlap")
        object.__setattr__(self, "stored", s)
        object.__setattr__(self, "unstored", u)

    @classmethod
    def from_stored(cls, k: int, stored, n: int) -> "FrequencyPartition":
        s = np.unique(np.asarray(stored, dtype=np.int64))
        mask = np.ones(n, dtype=bool)
        mask[s] = False
        return cls(k, s, np.nonzero(mask)[0])

    @property
    def n(self) -> int:
        return self.stored.size + self.unstored.size


@dataclass
class CoherenceParams:
    """Per-frequency inverse ranges; fixed_mask marks pinned entries."""

    kappa: np.ndarray
    fixed_mask: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.kappa, dtype=float)
        m = np.asarray(self.fixed_mask, dtype=bool)
        if k.shape != m.shape or k.ndim != 1:
            raise ValueError("kappa and fixed_mask must be 1-D and matching")
        if np.any(k <= 0):
            raise ValueError("kappa must be positive")
        self.kappa = k
        self.fixed_mask = m

    @classmethod
    def pinned_low_frequencies(cls, K: int, value: float = PINNED_KAPPA,
                               upto: int = 2, default: float = 1.0) -> "CoherenceParams":
        kappa = np.full(K, default)
        mask = np.zeros(K, dtype=bool)
        hi = min(upto, K - 1)
        kappa[: hi + 1] = value
        mask[: hi + 1] = True
        return cls(kappa, mask)


class KappaEstimate(NamedTuple):
    kappa: float
    at_bound: bool


def scale_field(coeffs: np.ndarray, spectra: np.ndarray) -> np.ndarray:
    """Z = coefficients / sqrt(f); accepts matching (n, K) arrays or rows."""
    f = np.asarray(spectra, dtype=float)
    if np.any(f <= 0):
        raise ValueError("spectra must be strictly positive")
    return np.asarray(coeffs) / np.sqrt(f)


def unscale_field(Z: np.ndarray, spectra: np.ndarray) -> np.ndarray:
    return np.asarray(Z) * np.sqrt(np.asarray(spectra, dtype=float))


def partition_blocks(Q: SparsePrecision | sp.spmatrix, part: FrequencyPartition):
    """(Q22, Q21): principal block on unstored vertices and its coupling block."""
    A = Q.Q if isinstance(Q, SparsePrecision) else sp.csc_matrix(Q)
    A = A.tocsr()
    Q22 = A[part.unstored][:, part.unstored].tocsc()
    Q21 = A[part.unstored][:, part.stored].tocsr()
    return Q22, Q21


def conditional_system(Q, part: FrequencyPartition, Z1: np.ndarray):
    """Conditional mean of Z2 given Z1 plus the Q22 factor for reuse."""
    if part.unstored.size == 0:
        return np.zeros(0, dtype=complex), None
    if part.stored.size == 0:
        n2 = part.unstored.size
        A = Q.Q if isinstance(Q, SparsePrecision) else sp.csc_matrix(Q)
        return np.zeros(n2, dtype=np.asarray(Z1).dtype), factorize(A)
    Z1 = np.asarray(Z1)
    if Z1.shape[0] != part.stored.size:
        raise ValueError("Z1 length must match the stored set")
    Q22, Q21 = partition_blocks(Q, part)
    factor = factorize(Q22)
    zhat2 = factor.solve(-(Q21 @ Z1))
    return zhat2, factor


def conditional_expectation(Q, part: FrequencyPartition, Z1: np.ndarray) -> np.ndarray:
    """E[Z2 | Z1] = -Q22^{-1} Q21 Z1 via one sparse factorization."""
    zhat2, _ = conditional_system(Q, part, Z1)
    return zhat2


def conditional_simulation(factor: CholeskyFactor, zhat2: np.ndarray,
                           rng: np.random.Generator, real: bool = False) -> np.ndarray:
    """Draw Z2hat + e2 with e2 ~ (C)N(0, Q22^{-1}).

    Complex noise has iid CN(0,1) entries (real and imaginary parts drawn in
    that order, each with variance 1/2); real frequencies use N(0,1) noise.
    """
    zhat2 = np.asarray(zhat2)
    m = zhat2.shape[0]
    if m == 0:
        return zhat2.copy()
    if real:
        eps = rng.standard_normal(m)
    else:
        re = rng.standard_normal(m)
        im = rng.standard_normal(m)
        eps = (re + 1j * im) / np.sqrt(2.0)
    return zhat2 + factor.sample(eps)


def _quad_form(Q22, resid):
    return float(np.real(np.vdot(resid, Q22 @ resid)))


def conditional_loglik(op: SpdeOperator, kappa: float, part: FrequencyPartition,
                       z_row: np.ndarray, log_f_row: np.ndarray) -> float:
    """Conditional loglikelihood of the unstored coefficients at one frequency.

        CL = -1/2 sum_unstored log f + 1/2 log det Q22 - 1/2 (Z2-Z2hat)' Q22 (Z2-Z2hat)

    The same expression serves the real-coefficient frequencies; only the
    distributional reading differs.
    """
    if part.unstored.size == 0:
        return 0.0
    Q = op.precision(kappa)
    z_row = np.asarray(z_row)
    zhat2, factor = conditional_system(Q, part, z_row[part.stored])
    if part.stored.size == 0:
        Q22 = Q.Q
    else:
        Q22, _ = partition_blocks(Q, part)
    resid = z_row[part.unstored] - zhat2
    logf_term = float(np.sum(np.asarray(log_f_row)[part.unstored]))
    return -0.5 * logf_term + 0.5 * factor.logdet() - 0.5 * _quad_form(Q22, resid)


def marginal_loglik(op: SpdeOperator, kappa: float, z_row: np.ndarray,
                    log_f_row: np.ndarray) -> float:
    """Unconditioned loglikelihood over all vertices (used for initial kappa)."""
    Q = op.precision(kappa)
    factor = factorize(Q.Q)
    z = np.asarray(z_row)
    quad = float(np.real(np.vdot(z, Q.Q @ z)))
    return 0.5 * factor.logdet() - 0.5 * quad - 0.5 * float(np.sum(log_f_row))


def estimate_kappa(objective: str, op: SpdeOperator, part: FrequencyPartition | None,
                   z_row: np.ndarray, log_f_row: np.ndarray,
                   bounds: tuple[float, float] = KAPPA_BOUNDS,
                   fixed: bool = False) -> KappaEstimate:
    """Maximize the chosen loglikelihood over log kappa by bounded scalar search.

    objective: "marginal" (full precision, no partition) or "conditional".
    Refuses pinned frequencies (fixed=True).
    """
    if fixed:
        raise ValueError("kappa is pinned at this frequency; estimation refused")
    if objective == "marginal":
        def negloglik(logk):
            return -marginal_loglik(op, float(np.exp(logk)), z_row, log_f_row)
    elif objective == "conditional":
        if part is None:
            raise ValueError("conditional objective needs a partition")

        def negloglik(logk):
            return -conditional_loglik(op, float(np.exp(logk)), part, z_row, log_f_row)
    else:
        raise ValueError(f"unknown objective {objective!r}")

    lo, hi = np.log(bounds[0]), np.log(bounds[1])
    res = minimize_scalar(negloglik, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-3})
    logk = float(res.x)
    at_bound = (logk - lo) < 2e-3 or (hi - logk) < 2e-3
    return KappaEstimate(float(np.exp(logk)), at_bound)
