"""Grid geometry on the sphere, area weights, and the flat binary cube format.

Pixels are ordered row-major: latitude is the outer index, longitude the
inner one, so pixel p = i_lat * n_lon + i_lon.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np


class CubeFormatError(ValueError):
    """Raised for malformed cube files (bad header, size mismatch, NaNs)."""


@dataclass(frozen=True)
class Grid:
    """Regular latitude/longitude grid on the sphere.

    latitudes  : strictly increasing, degrees in [-90, 90]
    longitudes : strictly increasing, degrees, span < 360 (periodic mod 360)
    land_mask  : optional boolean vector of length n (True = land)
    """

    latitudes: np.ndarray
    longitudes: np.ndarray
    land_mask: np.ndarray | None = None

    def __post_init__(self):
        lat = np.asarray(self.latitudes, dtype=float)
        lon = np.asarray(self.longitudes, dtype=float)
        object.__setattr__(self, "latitudes", lat)
        object.__setattr__(self, "longitudes", lon)
        if lat.ndim != 1 or lon.ndim != 1 or lat.size < 1 or lon.size < 1:
            raise ValueError("latitudes/longitudes must be non-empty 1-D arrays")
        if np.any(lat < -90.0) or np.any(lat > 90.0):
            raise ValueError("latitudes must lie in [-90, 90]")
        if lat.size > 1 and np.any(np.diff(lat) <= 0):
            raise ValueError("latitudes must be strictly increasing")
        if lon.size > 1 and np.any(np.diff(lon) <= 0):
            raise ValueError("longitudes must be strictly increasing")
        if lon.size > 1 and (lon[-1] - lon[0]) >= 360.0:
            raise ValueError("longitude span must be < 360 degrees")
        if self.land_mask is not None:
            mask = np.asarray(self.land_mask, dtype=bool)
            if mask.shape != (self.n,):
                raise ValueError("land_mask must have one entry per pixel")
            object.__setattr__(self, "land_mask", mask)

    @property
    def n_lat(self) -> int:
        return self.latitudes.size

    @property
    def n_lon(self) -> int:
        return self.longitudes.size

    @property
    def n(self) -> int:
        return self.n_lat * self.n_lon

    def pixel_latitudes(self) -> np.ndarray:
        """Latitude of every pixel, in pixel order (length n)."""
        return np.repeat(self.latitudes, self.n_lon)

    def pixel_longitudes(self) -> np.ndarray:
        return np.tile(self.longitudes, self.n_lat)


@dataclass
class TimeCube:
    """A real field on a grid over T time steps; values are float32, n x T."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float32)
        if vals.ndim != 2 or vals.shape[0] != self.grid.n:
            raise ValueError("values must be an (n, T) array matching the grid")
        if not np.all(np.isfinite(vals)):
            raise ValueError("cube contains non-finite values")
        self.values = vals

    @property
    def T(self) -> int:
        return self.values.shape[1]


def uniform_grid(n_lat: int, n_lon: int, include_poles: bool = False,
                 land_mask: np.ndarray | None = None) -> Grid:
    """Evenly spaced global grid; cell centers by default, pole rows on request."""
    if include_poles:
        lats = np.linspace(-90.0, 90.0, n_lat)
    else:
        step = 180.0 / n_lat
        lats = -90.0 + step * (np.arange(n_lat) + 0.5)
    lons = 360.0 / n_lon * np.arange(n_lon)
    return Grid(lats, lons, land_mask)


def sphere_coords(grid: Grid) -> np.ndarray:
    """Unit-sphere embedding of every pixel: rows (cos p cos l, cos p sin l, sin p)."""
    lat = np.deg2rad(grid.pixel_latitudes())
    lon = np.deg2rad(grid.pixel_longitudes())
    # sin(pi/2 - |lat|) reaches 0 exactly at the poles, unlike cos(lat)
    coslat = np.sin(np.deg2rad(90.0 - np.abs(grid.pixel_latitudes())))
    xyz = np.column_stack([coslat * np.cos(lon), coslat * np.sin(lon), np.sin(lat)])
    norms = np.linalg.norm(xyz, axis=1)
    return xyz / norms[:, None]


def chordal_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean distance in R^3 between two unit vectors; range [0, 2]."""
    return float(np.linalg.norm(np.asarray(a, float) - np.asarray(b, float)))


def pixel_area_weights(grid: Grid) -> np.ndarray:
    """cos(latitude) weights, clamped at 0, normalized to sum to 1."""
    lat = grid.pixel_latitudes()
    w = np.sin(np.deg2rad(90.0 - np.abs(lat)))
    w = np.maximum(w, 0.0)
    total = w.sum()
    if total <= 0.0:
        raise ValueError("all pixels have zero area weight")
    return w / total


def _format_floats(values: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in values)


def _axis_is_uniform(values: np.ndarray) -> bool:
    if values.size < 2:
        return False
    d = np.diff(values)
    return bool(np.allclose(d, d[0], rtol=0.0, atol=1e-9))


def save_cube(grid: Grid, cube: TimeCube, path: str | os.PathLike) -> None:
    """Write a cube file: text header, blank line, little-endian f32 payload."""
    if cube.grid.n != grid.n:
        raise ValueError("grid and cube are inconsistent")
    lines = [f"nlat {grid.n_lat}", f"nlon {grid.n_lon}", f"ntime {cube.T}"]
    if _axis_is_uniform(grid.latitudes):
        lines.append(f"lat0 {float(grid.latitudes[0])!r}")
        lines.append(f"dlat {float(grid.latitudes[1] - grid.latitudes[0])!r}")
    else:
        lines.append("lats " + _format_floats(grid.latitudes))
    if _axis_is_uniform(grid.longitudes):
        lines.append(f"lon0 {float(grid.longitudes[0])!r}")
        lines.append(f"dlon {float(grid.longitudes[1] - grid.longitudes[0])!r}")
    else:
        lines.append("lons " + _format_floats(grid.longitudes))
    if grid.land_mask is not None:
        lines.append("mask " + "".join("1" if m else "0" for m in grid.land_mask))
    header = "\n".join(lines) + "\n\n"
    payload = np.ascontiguousarray(cube.values, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8"))
        fh.write(payload)


def load_cube(path: str | os.PathLike) -> tuple[Grid, TimeCube]:
    """Read a cube file written by save_cube; values are bit-identical."""
    with open(path, "rb") as fh:
        raw = fh.read()
    sep = raw.find(b"\n\n")
    if sep < 0:
        raise CubeFormatError("missing blank line terminating the header")
    try:
        header = raw[:sep].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CubeFormatError("header is not valid UTF-8") from exc
    fields: dict[str, str] = {}
    for line in header.splitlines():
        line = line.strip()
        if not line:
            continue
        key, _, value = line.partition(" ")
        if not value:
            raise CubeFormatError(f"malformed header line: {line!r}")
        fields[key] = value

    def geti(key):
        if key not in fields:
            raise CubeFormatError(f"missing header key {key!r}")
        try:
            return int(fields[key])
        except ValueError as exc:
            raise CubeFormatError(f"bad integer for {key!r}") from exc

    n_lat, n_lon, T = geti("nlat"), geti("nlon"), geti("ntime")
    if n_lat < 1 or n_lon < 1 or T < 1:
        raise CubeFormatError("nlat, nlon, ntime must be positive")

    def axis(n, list_key, start_key, step_key):
        if list_key in fields:
            vals = np.array([float(v) for v in fields[list_key].split()])
            if vals.size != n:
                raise CubeFormatError(f"{list_key} has {vals.size} entries, expected {n}")
            return vals
        if start_key in fields and step_key in fields:
            return float(fields[start_key]) + float(fields[step_key]) * np.arange(n)
        raise CubeFormatError(f"need either {list_key!r} or {start_key!r}/{step_key!r}")

    lats = axis(n_lat, "lats", "lat0", "dlat")
    lons = axis(n_lon, "lons", "lon0", "dlon")
    mask = None
    if "mask" in fields:
        bits = fields["mask"].strip()
        if len(bits) != n_lat * n_lon or set(bits) - {"0", "1"}:
            raise CubeFormatError("mask must be n characters of '0'/'1'")
        mask = np.frombuffer(bits.encode(), dtype="S1") == b"1"
    try:
        grid = Grid(lats, lons, mask)
    except ValueError as exc:
        raise CubeFormatError(str(exc)) from exc

    payload = raw[sep + 2:]
    expected = grid.n * T * 4
    if len(payload) != expected:
        raise CubeFormatError(
            f"payload is {len(payload)} bytes, header implies {expected}")
    values = np.frombuffer(payload, dtype="<f4").reshape(grid.n, T)
    if not np.all(np.isfinite(values)):
        raise CubeFormatError("payload contains non-finite values")
    return grid, TimeCube(grid, values.copy())
