import csv

import numpy as np
import pytest

from halfspec.evalmetrics import (
    build_report,
    contrast_variances,
    emit_report,
    log_contrast_maps,
    rmspe,
)
from halfspec.gridio import TimeCube, load_cube, pixel_area_weights, uniform_grid


def cube_pair(n_lat=4, n_lon=6, T=10, seed=0, offset=0.0):
    rng = np.random.default_rng(seed)
    grid = uniform_grid(n_lat, n_lon)
    a = rng.standard_normal((grid.n, T)).astype(np.float32)
    return grid, TimeCube(grid, a), TimeCube(grid, a + np.float32(offset))


class TestRmspe:
    def test_identical_cubes(self):
        grid, a, _ = cube_pair()
        s, all_, land, ocean = rmspe(a, a)
        assert np.all(s == 0)
        assert all_ == 0.0

    def test_constant_offset(self):
        grid, a, b = cube_pair(offset=1.0)
        s, all_, _, _ = rmspe(a, b)
        np.testing.assert_allclose(s, 1.0, rtol=1e-6)
        assert all_ == pytest.approx(1.0, rel=1e-6)

    def test_masked_aggregates(self):
        rng = np.random.default_rng(1)
        grid = uniform_grid(4, 6)
        mask = rng.random(grid.n) > 0.5
        vals = rng.standard_normal((grid.n, 8)).astype(np.float32)
        a = TimeCube(grid, vals)
        b = TimeCube(grid, vals + np.where(mask, 2.0, 1.0)[:, None].astype(np.float32))
        s, all_, land, ocean = rmspe(a, b, mask=mask)
        assert land == pytest.approx(2.0, rel=1e-6)
        assert ocean == pytest.approx(1.0, rel=1e-6)
        assert 1.0 < all_ < 2.0  # weighted betweenness

    def test_betweenness_property(self):
        rng = np.random.default_rng(2)
        grid = uniform_grid(5, 8)
        mask = rng.random(grid.n) > 0.3
        vals = rng.standard_normal((grid.n, 12)).astype(np.float32)
        pert = rng.standard_normal((grid.n, 12)).astype(np.float32)
        a, b = TimeCube(grid, vals), TimeCube(grid, vals + pert)
        _, all_, land, ocean = rmspe(a, b, mask=mask)
        lo, hi = min(land, ocean), max(land, ocean)
        assert lo ** 2 - 1e-12 <= all_ ** 2 <= hi ** 2 + 1e-12

    def test_shape_mismatch(self):
        grid, a, _ = cube_pair()
        other = TimeCube(grid, np.zeros((grid.n, 3), np.float32))
        with pytest.raises(ValueError):
            rmspe(a, other)

    def test_explicit_weights(self):
        grid, a, b = cube_pair(offset=1.0)
        w = pixel_area_weights(grid)
        _, all_, _, _ = rmspe(a, b, weights=w)
        assert all_ == pytest.approx(1.0, rel=1e-6)


class TestContrasts:
    def test_constant_cube(self):
        grid = uniform_grid(3, 4)
        cube = TimeCube(grid, np.full((grid.n, 6), 2.0, np.float32))
        ns, ew, tmp = contrast_variances(cube)
        assert np.nanmax(ns) == 0.0 and ew.max() == 0.0 and tmp.max() == 0.0
        logs = log_contrast_maps(cube)
        assert np.all(np.isnan(logs["east_west"]))

    def test_linear_time_ramp(self):
        grid = uniform_grid(3, 4)
        ramp = np.tile(np.arange(6, dtype=np.float32), (grid.n, 1))
        ns, ew, tmp = contrast_variances(TimeCube(grid, ramp))
        np.testing.assert_allclose(tmp, 1.0)
        np.testing.assert_allclose(ew, 0.0)
        np.testing.assert_allclose(ns[~np.isnan(ns)], 0.0)

    def test_iid_noise_contrast_is_two(self):
        rng = np.random.default_rng(3)
        grid = uniform_grid(6, 10)
        T = 4000
        cube = TimeCube(grid, rng.standard_normal((grid.n, T)).astype(np.float32))
        ns, ew, tmp = contrast_variances(cube)
        se = 3 * np.sqrt(2.0 / T) * 2  # ~3 standard errors of a mean of chi^2 terms
        assert abs(np.nanmean(ns) - 2.0) < se
        assert abs(ew.mean() - 2.0) < se
        assert abs(tmp.mean() - 2.0) < se

    def test_ns_missing_on_last_row(self):
        grid, a, _ = cube_pair(3, 4, 5)
        ns, _, _ = contrast_variances(a)
        assert np.all(np.isnan(ns.reshape(3, 4)[-1]))
        assert np.all(np.isfinite(ns.reshape(3, 4)[:-1]))


class TestEmitReport:
    def test_csv_and_field_round_trip(self, tmp_path):
        grid, a, b = cube_pair(offset=0.5)
        report = build_report(a, b, metadata={"mode": "mean"})
        outdir = tmp_path / "report"
        emit_report(report, grid, outdir)
        with open(outdir / "metrics.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["metric", "subset", "value"]
        got = {(r[0], r[1]): r[2] for r in rows[1:]}
        assert float(got[("rmspe", "all")]) == pytest.approx(report.rmspe_all)
        assert ("rmspe", "land") not in got  # no mask on this grid
        _, rm = load_cube(outdir / "rmspe_map.cube")
        np.testing.assert_allclose(rm.values[:, 0], report.rmspe_map, rtol=1e-6)

    def test_land_rows_present_with_mask(self, tmp_path):
        rng = np.random.default_rng(4)
        grid = uniform_grid(4, 6, land_mask=rng.random(24) > 0.5)
        vals = rng.standard_normal((24, 6)).astype(np.float32)
        a = TimeCube(grid, vals)
        b = TimeCube(grid, vals + np.float32(1.0))
        report = build_report(a, b)
        emit_report(report, grid, tmp_path / "r2")
        with open(tmp_path / "r2" / "metrics.csv") as fh:
            text = fh.read()
        assert "land" in text and "ocean" in text
