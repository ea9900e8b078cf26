"""Unconditional simulation from a fully specified model; the test-data source.

Draws each frequency's coefficient map from the full spatial precision,
scales by the spectral densities, adds the mean, and inverts the transform.
Synthetic defaults use smooth latitude/longitude patterns for theta and an
inverse range that grows with frequency, so low frequencies are coherent
over large regions and high frequencies are local.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gridio import Grid, TimeCube, uniform_grid
from .specmodel import SpectralBasis, fitted_spectra
from .spectral import SpectralField, inverse_dft_all, real_frequencies
from .spde import SpdeOperator, build_mesh, factorize
from .util import parallel_map, stream_rng


@dataclass
class GeneratorSpec:
    """A complete generative model plus grid dimensions and a master seed."""

    grid: Grid
    T: int
    mu0: float
    mu1: complex
    basis: SpectralBasis
    theta: np.ndarray
    kappa: np.ndarray
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        K = self.T // 2 + 1
        if self.basis.K != K:
            raise ValueError("basis length must be T//2 + 1")
        if self.theta.shape != (self.grid.n, 3):
            raise ValueError("theta must be (n, 3)")
        if self.kappa.shape != (K,) or np.any(self.kappa <= 0):
            raise ValueError("kappa must be positive with one entry per frequency")


_DEFAULTS = {
    "mu0": 10.0,
    "mu1_re": -4.0,
    "mu1_im": 1.0,
    "ar_phi": 0.85,
    "log_scale": 1.0,
    "u0_slope": 0.0,
    "loading_scale": 2.5,
    "theta1_amp": 0.8,
    "theta2_amp": 0.5,
    "theta3_amp": 0.3,
    "kappa_low": 2.0,
    "kappa_high": 60.0,
}


def default_basis(T: int, ar_phi: float = 0.85, log_scale: float = 1.0,
                  loading_scale: float = 2.5, u0_slope: float = 0.0) -> SpectralBasis:
    """AR(1)-shaped u0 plus three orthogonal smooth loading curves.

    loading_scale sets the log-spectrum swing per unit theta; real
    temperature spectra vary over several decades, so the default gives
    unit-theta contributions of a couple of log units.  u0_slope adds a
    linear log-spectrum drop (in log units across the half spectrum) on
    top of the AR(1) shape for steeper-than-AR decay.
    """
    K = T // 2 + 1
    w = 2.0 * np.pi * np.arange(K) / T
    u0 = log_scale - np.log1p(ar_phi * ar_phi - 2.0 * ar_phi * np.cos(w)) \
        - u0_slope * np.arange(K) / max(K - 1, 1)
    x = np.linspace(0.0, 1.0, K)
    raw = [np.cos(np.pi * x), np.cos(2.0 * np.pi * x),
           np.exp(-((x - 0.3) / 0.2) ** 2)]
    vecs = []
    for v in raw:
        v = v - v.mean()
        for u in vecs:
            v = v - (v @ u) * u
        norm = np.linalg.norm(v)
        if norm < 1e-12:
            raise ValueError("degenerate loading curve; increase T")
        v = v / norm
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        vecs.append(v)
    return SpectralBasis(u0, *(loading_scale * v for v in vecs))


def default_theta(grid: Grid, amps=(0.8, 0.5, 0.3)) -> np.ndarray:
    """Smooth low-order patterns over the sphere, one column per component."""
    lat = np.deg2rad(grid.pixel_latitudes())
    lon = np.deg2rad(grid.pixel_longitudes())
    return np.column_stack([
        amps[0] * np.sin(lat) * np.cos(lon),
        amps[1] * np.cos(lat) * np.sin(2.0 * lon),
        amps[2] * np.sin(2.0 * lat + 0.5),
    ])


def default_kappa(T: int, low: float = 2.0, high: float = 60.0) -> np.ndarray:
    """Inverse range rising geometrically from low to high frequency."""
    K = T // 2 + 1
    return np.exp(np.linspace(np.log(low), np.log(high), K))


def default_spec(n_lat: int, n_lon: int, T: int, seed: int = 0,
                 include_poles: bool = False, **overrides) -> GeneratorSpec:
    params = dict(_DEFAULTS)
    unknown = set(overrides) - set(params)
    if unknown:
        raise ValueError(f"unknown generator parameters: {sorted(unknown)}")
    params.update(overrides)
    grid = uniform_grid(n_lat, n_lon, include_poles)
    basis = default_basis(T, params["ar_phi"], params["log_scale"],
                          params["loading_scale"], params["u0_slope"])
    theta = default_theta(grid, (params["theta1_amp"], params["theta2_amp"],
                                 params["theta3_amp"]))
    kappa = default_kappa(T, params["kappa_low"], params["kappa_high"])
    return GeneratorSpec(grid, T, params["mu0"],
                         complex(params["mu1_re"], params["mu1_im"]),
                         basis, theta, kappa, seed, params)


def read_spec_file(path, n_lat=None, n_lon=None, T=None, seed=None) -> GeneratorSpec:
    """Key/value text file mirroring the generator parameters.

    Recognized keys: nlat, nlon, ntime, seed, include_poles, and any of the
    default parameter names (mu1 takes two floats: real imaginary).
    """
    values: dict[str, str] = {}
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, rest = line.partition(" ")
            values[key] = rest.strip()
    n_lat = n_lat if n_lat is not None else int(values.pop("nlat"))
    n_lon = n_lon if n_lon is not None else int(values.pop("nlon"))
    T = T if T is not None else int(values.pop("ntime"))
    for drop in ("nlat", "nlon", "ntime"):
        values.pop(drop, None)
    if seed is None:
        seed = int(values.pop("seed", 0))
    else:
        values.pop("seed", None)
    include_poles = values.pop("include_poles", "0").strip() in ("1", "true", "yes")
    overrides = {}
    if "mu1" in values:
        re, im = values.pop("mu1").split()
        overrides["mu1_re"] = float(re)
        overrides["mu1_im"] = float(im)
    for key, raw in values.items():
        overrides[key] = float(raw)
    return default_spec(n_lat, n_lon, T, seed, include_poles, **overrides)


def generate(spec: GeneratorSpec, threads: int = 1) -> TimeCube:
    """Deterministic unconditional draw from the generator model."""
    grid, T = spec.grid, spec.T
    K = T // 2 + 1
    mesh = build_mesh(grid)
    op = SpdeOperator(mesh)
    sqrt_f = np.sqrt(fitted_spectra(spec.theta, spec.basis))
    realf = real_frequencies(T)

    def draw(k):
        rng = stream_rng(spec.seed, k)
        factor = factorize(op.precision(spec.kappa[k]).Q)
        m = mesh.n_vertices
        if realf[k]:
            eps = rng.standard_normal(m).astype(complex)
        else:
            re = rng.standard_normal(m)
            im = rng.standard_normal(m)
            eps = (re + 1j * im) / np.sqrt(2.0)
        z = factor.sample(eps)
        return mesh.expand_vertex_values(z) * sqrt_f[:, k]

    columns = parallel_map(draw, list(range(K)), threads)
    coeffs = np.column_stack(columns)
    coeffs[:, realf] = coeffs[:, realf].real
    rt = np.sqrt(T)
    coeffs[:, 0] += rt * spec.mu0
    coeffs[:, 1] += rt * spec.mu1
    return inverse_dft_all(SpectralField(grid, T, coeffs))
