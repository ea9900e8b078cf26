"""Fidelity diagnostics between an original cube and a reconstruction."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .gridio import Grid, TimeCube, pixel_area_weights, save_cube

MISSING = 9.96921e36  # sentinel for undefined map values in cube files


@dataclass
class FidelityReport:
    rmspe_map: np.ndarray
    rmspe_all: float
    rmspe_land: float        # NaN without a land mask
    rmspe_ocean: float
    contrasts_original: dict[str, np.ndarray]
    contrasts_decompressed: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)


def rmspe(original: TimeCube, decompressed: TimeCube,
          weights: np.ndarray | None = None,
          mask: np.ndarray | None = None):
    """Pixelwise RMS prediction error plus area-weighted aggregates.

    Aggregates are sqrt of the weighted mean of s(x)^2 over all pixels and,
    when a land mask is given, over the land and ocean subsets.
    """
    if original.values.shape != decompressed.values.shape:
        raise ValueError("cubes must have matching shapes")
    diff = original.values.astype(float) - decompressed.values.astype(float)
    s = np.sqrt(np.mean(diff ** 2, axis=1))
    if weights is None:
        weights = pixel_area_weights(original.grid)

    def aggregate(sub):
        wsub = weights[sub]
        if wsub.sum() <= 0:
            return float("nan")
        return float(np.sqrt(np.sum(wsub * s[sub] ** 2) / wsub.sum()))

    everything = np.ones(s.size, dtype=bool)
    land = ocean = float("nan")
    if mask is not None:
        mask = np.asarray(mask, bool)
        land = aggregate(mask)
        ocean = aggregate(~mask)
    return s, aggregate(everything), land, ocean


def contrast_variances(cube: TimeCube):
    """North-south, east-west, and one-step temporal contrast variances.

    NS uses the northern neighbor and is NaN on the last latitude row; EW
    wraps in longitude; all three are time averages of squared differences.
    """
    if cube.T < 2:
        raise ValueError("contrast variances need T >= 2")
    grid = cube.grid
    v = cube.values.astype(float).reshape(grid.n_lat, grid.n_lon, cube.T)
    ns = np.full((grid.n_lat, grid.n_lon), np.nan)
    ns[:-1] = np.mean((v[:-1] - v[1:]) ** 2, axis=2)
    ew = np.mean((v - np.roll(v, -1, axis=1)) ** 2, axis=2)
    tmp = np.mean((v[:, :, :-1] - v[:, :, 1:]) ** 2, axis=2)
    return ns.ravel(), ew.ravel(), tmp.ravel()


def log_contrast_maps(cube: TimeCube) -> dict[str, np.ndarray]:
    """Contrast variances on the log scale; zero or undefined contrasts are NaN."""
    ns, ew, tmp = contrast_variances(cube)
    out = {}
    for name, vals in (("north_south", ns), ("east_west", ew), ("temporal", tmp)):
        with np.errstate(divide="ignore", invalid="ignore"):
            out[name] = np.where(vals > 0, np.log(np.where(vals > 0, vals, 1.0)), np.nan)
    return out


def build_report(original: TimeCube, decompressed: TimeCube,
                 contrast_cube: TimeCube | None = None,
                 weights: np.ndarray | None = None,
                 mask: np.ndarray | None = None,
                 metadata: dict | None = None) -> FidelityReport:
    """Assemble the full report; contrast maps default to the decompressed cube.

    Pass a conditional simulation as contrast_cube to compare second-order
    structure the way it is meant to be judged (the conditional mean is
    oversmooth by construction).
    """
    if mask is None:
        mask = original.grid.land_mask
    s, all_, land, ocean = rmspe(original, decompressed, weights, mask)
    cc = contrast_cube if contrast_cube is not None else decompressed
    return FidelityReport(
        rmspe_map=s, rmspe_all=all_, rmspe_land=land, rmspe_ocean=ocean,
        contrasts_original=log_contrast_maps(original),
        contrasts_decompressed=log_contrast_maps(cc),
        metadata=dict(metadata or {}))


def emit_report(report: FidelityReport, grid: Grid, outdir) -> None:
    """Write metrics.csv plus per-pixel field files in the cube format."""
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "metrics.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "subset", "value"])
        writer.writerow(["rmspe", "all", repr(report.rmspe_all)])
        if np.isfinite(report.rmspe_land):
            writer.writerow(["rmspe", "land", repr(report.rmspe_land)])
        if np.isfinite(report.rmspe_ocean):
            writer.writerow(["rmspe", "ocean", repr(report.rmspe_ocean)])
        for key, value in report.metadata.items():
            writer.writerow(["metadata", key, value])

    def dump(name, values):
        filled = np.where(np.isfinite(values), values, MISSING)
        save_cube(grid, TimeCube(grid, filled[:, None].astype(np.float32)),
                  os.path.join(outdir, name + ".cube"))

    dump("rmspe_map", report.rmspe_map)
    for name, vals in report.contrasts_original.items():
        dump(f"contrast_{name}_original", vals)
    for name, vals in report.contrasts_decompressed.items():
        dump(f"contrast_{name}_decompressed", vals)
