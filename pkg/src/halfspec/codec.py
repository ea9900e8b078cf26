"""Bit-exact compressed archive and the compress/decompress/emulate pipelines.

Archive layout (little-endian):

    magic "HSCF" | u32 version | u32 n_lat | u32 n_lon | u32 T
    f32 ratio | u8 variant | 3 pad | u64 seed
    u32 M | u32 J | f32 d_min | u16 stride_lat | u16 stride_lon
    f32 index_bits_per_pair | u32 flags
    f32 lats[n_lat] | f32 lons[n_lon]
    f32 mu0 | f32 mu1_re | f32 mu1_im
    f32 theta[3n] | f32 u0[K] u1[K] u2[K] u3[K] | f32 kappa[K]
    u32 n_pairs | u32 index_bytes | index payload (varint deltas)
    u32 n_values | f32 values[n_values]

Index entries are flattened keys k * n + pixel, strictly increasing, stored
as a head value plus successive gaps in base-128 varints.  Values follow in
index order: one float for real-coefficient frequencies (k = 0 and Nyquist),
real then imaginary for complex ones.  All numbers are 32-bit; the whole
file never exceeds floor(4 n T / ratio) bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .condgp import FrequencyPartition, conditional_simulation, conditional_system
from .gridio import Grid, TimeCube, pixel_area_weights, sphere_coords
from .select import (
    BudgetReport,
    SelectionConfig,
    SelectionProblem,
    compute_budget,
    estimate_initial_kappa,
    run_selection,
)
from .specmodel import (
    SpectralBasis,
    build_basis,
    estimate_mean,
    fit_theta_all,
    log_spectra,
    remove_mean,
)
from .spectral import (
    SpectralField,
    forward_dft_all,
    inverse_dft_all,
    periodogram,
    real_frequencies,
)
from .spde import SpdeOperator, build_mesh
from .util import derived_seed, parallel_map, stream_rng

MAGIC = b"HSCF"
VERSION = 1
_VARIANTS = {"sequential": 0, "distributed": 1}
_VARIANT_NAMES = {v: k for k, v in _VARIANTS.items()}


class ArchiveError(ValueError):
    """Corrupt or incompatible archive data."""


def encode_uvarint(value: int) -> bytes:
    if value < 0:
        raise ValueError("varints are unsigned")
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        out.append(byte | (0x80 if value else 0))
        if not value:
            return bytes(out)


def decode_uvarint(data: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if pos >= len(data):
            raise ArchiveError("truncated varint stream")
        if shift > 63:
            raise ArchiveError("varint overflow")
        byte = data[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return result, pos
        shift += 7


def encode_indices(keys: np.ndarray) -> bytes:
    """Delta-encode strictly increasing flattened (k, pixel) keys."""
    keys = np.asarray(keys, dtype=np.int64)
    if keys.size == 0:
        return b""
    if np.any(keys < 0) or (keys.size > 1 and np.any(np.diff(keys) <= 0)):
        raise ValueError("keys must be strictly increasing and nonnegative")
    parts = [encode_uvarint(int(keys[0]))]
    parts.extend(encode_uvarint(int(g)) for g in np.diff(keys))
    return b"".join(parts)


def decode_indices(data: bytes, count: int) -> np.ndarray:
    """Invert encode_indices for a known number of keys."""
    keys = np.empty(count, dtype=np.int64)
    pos = 0
    prev = 0
    for i in range(count):
        gap, pos = decode_uvarint(data, pos)
        prev = gap if i == 0 else prev + gap
        keys[i] = prev
    if pos != len(data):
        raise ArchiveError("trailing bytes after index stream")
    return keys


@dataclass
class CompressedArchive:
    """In-memory form of the archive; save/load are bit-exact."""

    n_lat: int
    n_lon: int
    T: int
    ratio: float
    variant: str
    seed: int
    M: int
    J: int
    d_min: float
    seed_strides: tuple[int, int]
    index_bits_per_pair: float
    lats: np.ndarray
    lons: np.ndarray
    mu0: float
    mu1: complex
    theta: np.ndarray
    basis_u: np.ndarray       # (4, K) rows u0..u3
    kappa: np.ndarray
    keys: np.ndarray          # flattened stored indices, sorted
    values: np.ndarray        # float32 coefficient components in key order

    @property
    def n(self) -> int:
        return self.n_lat * self.n_lon

    @property
    def K(self) -> int:
        return self.T // 2 + 1

    def grid(self) -> Grid:
        return Grid(np.asarray(self.lats, float), np.asarray(self.lons, float))

    def stored_per_frequency(self) -> np.ndarray:
        counts = np.zeros(self.K, dtype=np.int64)
        if self.keys.size:
            ks, cs = np.unique(self.keys // self.n, return_counts=True)
            counts[ks] = cs
        return counts

    def to_bytes(self) -> bytes:
        head = struct.pack(
            "<4sIIIIfB3xQIIfHHfI",
            MAGIC, VERSION, self.n_lat, self.n_lon, self.T,
            self.ratio, _VARIANTS[self.variant], self.seed,
            self.M, self.J, self.d_min,
            self.seed_strides[0], self.seed_strides[1],
            self.index_bits_per_pair, 0)
        blocks = [head]
        blocks.append(np.asarray(self.lats, "<f4").tobytes())
        blocks.append(np.asarray(self.lons, "<f4").tobytes())
        blocks.append(struct.pack("<fff", self.mu0, self.mu1.real, self.mu1.imag))
        blocks.append(np.asarray(self.theta, "<f4").tobytes())
        blocks.append(np.asarray(self.basis_u, "<f4").tobytes())
        blocks.append(np.asarray(self.kappa, "<f4").tobytes())
        index = encode_indices(self.keys)
        blocks.append(struct.pack("<II", self.keys.size, len(index)))
        blocks.append(index)
        blocks.append(struct.pack("<I", self.values.size))
        blocks.append(np.asarray(self.values, "<f4").tobytes())
        return b"".join(blocks)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "CompressedArchive":
        headfmt = "<4sIIIIfB3xQIIfHHfI"
        headlen = struct.calcsize(headfmt)
        if len(raw) < headlen:
            raise ArchiveError("archive too short for header")
        (magic, version, n_lat, n_lon, T, ratio, variant, seed,
         M, J, d_min, s_lat, s_lon, ibits, _flags) = struct.unpack_from(headfmt, raw)
        if magic != MAGIC:
            raise ArchiveError("bad magic; not a compressed-field archive")
        if version != VERSION:
            raise ArchiveError(f"unsupported archive version {version}")
        if variant not in _VARIANT_NAMES:
            raise ArchiveError(f"unknown variant code {variant}")
        n = n_lat * n_lon
        K = T // 2 + 1
        pos = headlen

        def take_f32(count):
            nonlocal pos
            end = pos + 4 * count
            if end > len(raw):
                raise ArchiveError("archive truncated in a float block")
            arr = np.frombuffer(raw[pos:end], dtype="<f4").copy()
            pos = end
            return arr

        lats = take_f32(n_lat)
        lons = take_f32(n_lon)
        mu0, mu1r, mu1i = struct.unpack_from("<fff", raw, pos)
        pos += 12
        theta = take_f32(3 * n).reshape(n, 3)
        basis_u = take_f32(4 * K).reshape(4, K)
        kappa = take_f32(K)
        if pos + 8 > len(raw):
            raise ArchiveError("archive truncated before index block")
        n_pairs, index_bytes = struct.unpack_from("<II", raw, pos)
        pos += 8
        if pos + index_bytes > len(raw):
            raise ArchiveError("archive truncated in index block")
        keys = decode_indices(raw[pos:pos + index_bytes], n_pairs)
        pos += index_bytes
        if pos + 4 > len(raw):
            raise ArchiveError("archive truncated before value block")
        (n_values,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        values = take_f32(n_values)
        if pos != len(raw):
            raise ArchiveError("trailing bytes after value block")
        if keys.size and (np.any(keys < 0) or np.any(keys >= n * K)):
            raise ArchiveError("index keys out of range")
        realf = real_frequencies(T)
        widths = np.where(realf[keys // n], 1, 2) if keys.size else np.empty(0, int)
        if int(widths.sum()) != n_values:
            raise ArchiveError("value count does not match index widths")
        return cls(n_lat, n_lon, T, float(ratio), _VARIANT_NAMES[variant], seed,
                   M, J, float(d_min), (s_lat, s_lon), float(ibits),
                   lats, lons, float(mu0), complex(mu1r, mu1i), theta,
                   basis_u, kappa, keys, values)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "CompressedArchive":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def byte_size(self) -> int:
        return len(self.to_bytes())


def _quantize_grid(grid: Grid) -> Grid:
    """Round the grid axes to float32 so both pipeline ends build the same mesh."""
    return Grid(np.asarray(grid.latitudes, "<f4").astype(float),
                np.asarray(grid.longitudes, "<f4").astype(float),
                grid.land_mask)


def _collect_values(keys, coeffs, n, T):
    realf = real_frequencies(T)
    out = []
    for key in keys:
        k, p = divmod(int(key), n)
        c = coeffs[p, k]
        out.append(np.float32(c.real))
        if not realf[k]:
            out.append(np.float32(c.imag))
    return np.asarray(out, dtype=np.float32)


def compress(cube: TimeCube, config: SelectionConfig, seed: int = 0,
             threads: int = 1, area_weighted_mean: bool = True,
             trace: list | None = None) -> CompressedArchive:
    """Fit the model, run the greedy search, and assemble the archive."""
    if cube.T < 4:
        raise ValueError("compression needs at least 4 time steps")
    grid = _quantize_grid(cube.grid)
    cube = TimeCube(grid, cube.values)
    n, T = grid.n, cube.T
    budget = compute_budget(config.ratio, n, T, config.index_bits_per_pair)

    field = forward_dft_all(cube)
    if area_weighted_mean:
        weights = pixel_area_weights(grid)
    else:
        weights = np.full(n, 1.0 / n)
    mean = estimate_mean(field, weights)
    anom = remove_mean(field, mean)
    basis = build_basis(anom)
    theta = fit_theta_all(periodogram(anom), basis, T)
    logf = log_spectra(theta, basis)

    mesh = build_mesh(grid)
    problem = SelectionProblem(
        grid=grid, mesh=mesh, op=SpdeOperator(mesh), T=T,
        coeffs=anom.coeffs, sqrt_f=np.exp(0.5 * logf), log_f=logf,
        coords=sphere_coords(grid))
    kappa0 = estimate_initial_kappa(problem, threads=threads)

    reserve = _container_overhead(grid, n, T, budget)
    state, kappa = run_selection(problem, config, budget, kappa0,
                                 threads=threads, reserve=reserve)
    if trace is not None:
        trace.extend(state.trace)

    keys = np.sort(np.asarray(
        [k * n + p for k in range(problem.K) for p in state.stored[k]],
        dtype=np.int64))
    archive = CompressedArchive(
        n_lat=grid.n_lat, n_lon=grid.n_lon, T=T, ratio=config.ratio,
        variant=config.variant, seed=seed, M=config.M, J=config.J,
        d_min=config.d_min, seed_strides=config.seed_strides,
        index_bits_per_pair=config.index_bits_per_pair,
        lats=np.asarray(grid.latitudes, "<f4"),
        lons=np.asarray(grid.longitudes, "<f4"),
        mu0=float(mean.mu0), mu1=complex(mean.mu1),
        theta=np.asarray(theta, "<f4"),
        basis_u=np.asarray(np.vstack([basis.u0, basis.u1, basis.u2, basis.u3]), "<f4"),
        kappa=np.asarray(kappa.kappa, "<f4"),
        keys=keys,
        values=_collect_values(keys, anom.coeffs, n, T))

    # the planning estimate is conservative, but the byte bound is a hard cap
    drop_from = len(state.order)
    while archive.byte_size() > budget.byte_bound and drop_from > 0:
        drop_from -= 1
        k, p = state.order[drop_from]
        archive.keys = archive.keys[archive.keys != k * n + p]
        archive.values = _collect_values(archive.keys, anom.coeffs, n, T)
    if archive.byte_size() > budget.byte_bound:
        raise ArchiveError("cannot satisfy the byte bound; ratio too aggressive")
    return archive


def _container_overhead(grid, n, T, budget: BudgetReport) -> float:
    """Numbers consumed by the container beyond the planning burden."""
    K = T // 2 + 1
    header_bytes = struct.calcsize("<4sIIIIfB3xQIIfHHfI") \
        + 4 * (grid.n_lat + grid.n_lon) + 12 + 16
    model_extra = (3 + 3 * n + 5 * K) - budget.burden_numbers
    return header_bytes / 4.0 + max(model_extra, 0)


def _model_from_archive(archive: CompressedArchive):
    grid = archive.grid()
    basis = SpectralBasis(*(archive.basis_u[i].astype(float) for i in range(4)))
    theta = archive.theta.astype(float)
    logf = log_spectra(theta, basis)
    mesh = build_mesh(grid)
    return grid, mesh, SpdeOperator(mesh), basis, logf


def _stored_rows(archive: CompressedArchive):
    """Per-frequency stored pixel lists and complex values from the blocks."""
    n, T = archive.n, archive.T
    realf = real_frequencies(T)
    rows: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    if archive.keys.size == 0:
        return rows
    ks = archive.keys // n
    ps = archive.keys % n
    widths = np.where(realf[ks], 1, 2)
    offsets = np.concatenate([[0], np.cumsum(widths)])
    vals = archive.values
    for k in np.unique(ks):
        sel = np.nonzero(ks == k)[0]
        pix = ps[sel]
        if realf[k]:
            cv = vals[offsets[sel]].astype(np.complex128)
        else:
            cv = vals[offsets[sel]].astype(np.complex128) \
                + 1j * vals[offsets[sel] + 1]
        rows[int(k)] = (pix, cv)
    return rows


def decompress(archive: CompressedArchive, mode: str = "mean",
               seed: int | None = None, threads: int = 1) -> TimeCube:
    """Reconstruct a cube by conditional expectation or conditional simulation."""
    if mode not in ("mean", "simulate"):
        raise ValueError("mode must be 'mean' or 'simulate'")
    if mode == "simulate" and seed is None:
        raise ValueError("simulate mode needs a seed")
    grid, mesh, op, basis, logf = _model_from_archive(archive)
    n, T, K = archive.n, archive.T, archive.K
    sqrt_f = np.exp(0.5 * logf)
    realf = real_frequencies(T)
    stored = _stored_rows(archive)
    kappa = archive.kappa.astype(float)

    def reconstruct(k):
        sf = sqrt_f[:, k]
        if k in stored:
            pix, vals = stored[k]
        else:
            pix = np.empty(0, dtype=np.int64)
            vals = np.empty(0, dtype=np.complex128)
        zpix = vals / sf[pix]
        sv_all = mesh.pixel_to_vertex[pix]
        sv, inverse = np.unique(sv_all, return_inverse=True)
        sums = np.zeros(sv.size, dtype=complex)
        np.add.at(sums, inverse, zpix)
        z1 = sums / np.bincount(inverse, minlength=sv.size) if sv.size else sums
        part = FrequencyPartition.from_stored(k, sv, mesh.n_vertices)
        Q = op.precision(kappa[k])
        zhat2, factor = conditional_system(Q, part, z1)
        if mode == "simulate" and part.unstored.size:
            rng = stream_rng(seed, k)
            zhat2 = conditional_simulation(factor, zhat2, rng, real=bool(realf[k]))
        zv = np.zeros(mesh.n_vertices, dtype=complex)
        if sv.size:
            zv[part.stored] = z1
        zv[part.unstored] = zhat2
        row = mesh.expand_vertex_values(zv) * sf
        row[pix] = vals          # stored coefficients are data, not model output
        if realf[k]:
            row = row.real.astype(np.complex128)
        return row

    columns = parallel_map(reconstruct, list(range(K)), threads)
    coeffs = np.column_stack(columns)
    rt = np.sqrt(T)
    coeffs[:, 0] += rt * archive.mu0
    coeffs[:, 1] += rt * archive.mu1
    return inverse_dft_all(SpectralField(grid, T, coeffs))


def emulate(archive: CompressedArchive, count: int, seed: int,
            threads: int = 1) -> list[TimeCube]:
    """Independent conditional simulations with per-realization derived seeds."""
    return [decompress(archive, "simulate", derived_seed(seed, r), threads)
            for r in range(count)]


def inspect_report(archive: CompressedArchive) -> str:
    """Human-readable header, budget, and per-frequency storage summary."""
    n, T = archive.n, archive.T
    budget = compute_budget(archive.ratio, n, T, archive.index_bits_per_pair)
    counts = archive.stored_per_frequency()
    index_bytes = len(encode_indices(archive.keys))
    achieved = 8.0 * index_bytes / archive.keys.size if archive.keys.size else 0.0
    size = archive.byte_size()
    lines = [
        f"archive: {archive.n_lat} x {archive.n_lon} pixels, T={T}, "
        f"ratio {archive.ratio:g}, variant {archive.variant}, seed {archive.seed}",
        f"search: M={archive.M} J={archive.J} d_min={archive.d_min:g} "
        f"seed_strides={archive.seed_strides}",
        f"bytes: {size} (bound {budget.byte_bound})",
        f"budget numbers: total {budget.total_numbers:.1f}, "
        f"model burden {budget.burden_numbers}, coefficients {budget.remaining:.1f}",
        f"stored coefficients: {archive.keys.size} "
        f"({int(counts[0])} at k=0, {int(counts[1]) if archive.K > 1 else 0} at k=1)",
        f"index coding: {index_bytes} bytes, {achieved:.2f} bits/pair "
        f"(planned {archive.index_bits_per_pair:g})",
        "stored per frequency: " + " ".join(str(int(c)) for c in counts),
    ]
    return "\n".join(lines)
