"""Greedy budget-constrained selection of stored Fourier coefficients.

Residuals R(w_k; x) = Y(w_k; x) - Yhat(w_k; x) drive the search: the
sequential variant repeatedly batches the frequency with the largest squared
residual, the distributed variant spreads a batch over all frequencies in
proportion to their residual scores.  The search pauses at stored-count
milestones to re-estimate the coherence parameters from conditional
loglikelihoods, and re-estimates once more when the budget is exhausted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .condgp import (
    CoherenceParams,
    FrequencyPartition,
    conditional_system,
    estimate_kappa,
)
from .gridio import Grid
from .spectral import real_frequencies
from .spde import SpdeOperator, SphereMesh
from .util import parallel_map


class BudgetError(ValueError):
    """The compression ratio leaves no room for the model itself."""


@dataclass(frozen=True)
class SelectionConfig:
    """Knobs of the greedy search; defaults are the reference preset."""

    ratio: float = 10.0
    M: int = 50
    J: int = 8
    d_min: float = 0.05
    seed_strides: tuple[int, int] = (2, 4)
    variant: str = "sequential"
    index_bits_per_pair: float = 8.0
    dmin_cross_batch: bool = False

    def __post_init__(self):
        if self.ratio <= 1.0:
            raise ValueError("compression ratio must exceed 1")
        if self.M < 1 or self.J < 0 or self.d_min < 0:
            raise ValueError("require M >= 1, J >= 0, d_min >= 0")
        if self.variant not in ("sequential", "distributed"):
            raise ValueError("variant must be 'sequential' or 'distributed'")
        if min(self.seed_strides) < 1:
            raise ValueError("seed strides must be >= 1")


@dataclass
class BudgetReport:
    """Storage arithmetic in 32-bit numbers for one (ratio, n, T)."""

    ratio: float
    n: int
    T: int
    index_bits_per_pair: float
    total_numbers: float
    burden_numbers: int
    remaining: float

    def coefficient_cost(self, real: bool) -> float:
        return (1.0 if real else 2.0) + self.index_bits_per_pair / 32.0

    def fits(self, c_real: int, c_complex: int) -> bool:
        used = c_real + 2 * c_complex \
            + (c_real + c_complex) * self.index_bits_per_pair / 32.0
        return used <= self.remaining

    @property
    def byte_bound(self) -> int:
        return math.floor(4.0 * self.n * self.T / self.ratio)


def compute_budget(ratio: float, n: int, T: int,
                   index_bits_per_pair: float = 8.0) -> BudgetReport:
    """Total number budget n*T/ratio minus the model burden 3 + 3n + ceil(5T/2)."""
    if ratio <= 1.0:
        raise ValueError("ratio must exceed 1")
    total = n * T / ratio
    burden = 3 + 3 * n + math.ceil(5 * T / 2)
    remaining = total - burden
    if remaining <= 0:
        raise BudgetError(
            f"model burden {burden} exceeds the {total:.0f}-number budget "
            f"at ratio {ratio}; choose a smaller ratio")
    return BudgetReport(ratio, n, T, index_bits_per_pair, total, burden, remaining)


def seed_grid(grid: Grid, strides: tuple[int, int]) -> np.ndarray:
    """Pixels on every (lat-stride)-th row and (lon-stride)-th column, sorted."""
    s_lat, s_lon = strides
    if s_lat < 1 or s_lon < 1:
        raise ValueError("strides must be >= 1")
    rows = np.arange(0, grid.n_lat, s_lat)
    cols = np.arange(0, grid.n_lon, s_lon)
    return np.sort((rows[:, None] * grid.n_lon + cols[None, :]).ravel())


def pick_batch(resid_row: np.ndarray, unstored: np.ndarray, coords: np.ndarray,
               m: int, d_min: float,
               taken_coords: np.ndarray | None = None) -> np.ndarray:
    """Up to m unstored pixels with the largest |R|^2, spaced >= d_min apart.

    Candidates are scanned in decreasing |R|^2 (ties to the lower pixel index)
    and accepted only when at least d_min from every pixel already accepted in
    this batch (and from taken_coords, when given).
    """
    if m < 1 or unstored.size == 0:
        return np.empty(0, dtype=np.int64)
    r2 = np.abs(resid_row[unstored]) ** 2
    order = np.lexsort((unstored, -r2))
    cand = unstored[order]
    if d_min <= 0.0:
        return np.sort(cand[:m]).astype(np.int64)
    prior = 0 if taken_coords is None else len(taken_coords)
    xyz = np.empty((prior + m, 3))
    if prior:
        xyz[:prior] = taken_coords
    accepted: list[int] = []
    filled = prior
    d2 = d_min * d_min
    for p in cand:
        x = coords[p]
        if filled:
            diffs = xyz[:filled] - x
            if np.min(np.einsum("ij,ij->i", diffs, diffs)) < d2:
                continue
        accepted.append(int(p))
        xyz[filled] = x
        filled += 1
        if len(accepted) == m:
            break
    return np.sort(np.asarray(accepted, dtype=np.int64))


def allocate_m_k(D: np.ndarray, M: int,
                 capacity: np.ndarray | None = None) -> np.ndarray:
    """Largest-remainder integer split of M proportional to the scores D.

    Frequencies with zero capacity get nothing and their share is
    redistributed; remainder ties break toward the lower frequency index.
    """
    D = np.asarray(D, dtype=float)
    K = D.size
    if capacity is None:
        capacity = np.full(K, np.iinfo(np.int64).max, dtype=np.int64)
    else:
        capacity = np.asarray(capacity, dtype=np.int64)
    weights = np.where((capacity > 0) & (D > 0), D, 0.0)
    if weights.sum() <= 0.0:
        raise ValueError("all selection scores are zero")
    m = np.zeros(K, dtype=np.int64)
    left = int(M)
    for _ in range(K + 1):
        w = np.where((capacity - m) > 0, weights, 0.0)
        total = w.sum()
        if total <= 0.0 or left == 0:
            break
        share = w / total * left
        add = np.minimum(np.floor(share).astype(np.int64), capacity - m)
        rem = left - int(add.sum())
        frac = np.where((capacity - m - add) > 0, share - np.floor(share), -1.0)
        order = np.lexsort((np.arange(K), -frac))
        for k in order:
            if rem == 0:
                break
            if frac[k] >= 0.0:
                add[k] += 1
                rem -= 1
        m += add
        left = rem
        if left == 0:
            break
    return m


@dataclass
class SelectionProblem:
    """Everything the greedy search needs about one cube under one fitted model."""

    grid: Grid
    mesh: SphereMesh
    op: SpdeOperator
    T: int
    coeffs: np.ndarray       # mean-removed DFT coefficients, (n, K) complex
    sqrt_f: np.ndarray       # sqrt of fitted spectra, (n, K)
    log_f: np.ndarray        # log fitted spectra, (n, K)
    coords: np.ndarray       # unit-sphere pixel coordinates, (n, 3)

    @property
    def K(self) -> int:
        return self.coeffs.shape[1]

    def pixel_z(self, k: int) -> np.ndarray:
        return self.coeffs[:, k] / self.sqrt_f[:, k]

    def vertex_row(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Vertex-level scaled coefficients and log spectra at frequency k."""
        z = self.mesh.reduce_pixel_values(self.pixel_z(k))
        lf = self.mesh.reduce_pixel_values(self.log_f[:, k])
        return z, lf

    def vertex_partition(self, k: int, stored_pixels: np.ndarray
                         ) -> tuple[FrequencyPartition, np.ndarray]:
        """Partition over vertices plus the stored-vertex values of Z."""
        zpix = self.pixel_z(k)
        sv_all = self.mesh.pixel_to_vertex[stored_pixels]
        sv, inverse = np.unique(sv_all, return_inverse=True)
        part = FrequencyPartition.from_stored(k, sv, self.mesh.n_vertices)
        sums = np.zeros(sv.size, dtype=complex)
        np.add.at(sums, inverse, zpix[stored_pixels])
        counts = np.bincount(inverse, minlength=sv.size)
        return part, sums / counts


@dataclass
class SelectionState:
    """Mutable search state: stored sets, residuals, scores, budget usage."""

    stored: list[np.ndarray]
    resid: np.ndarray
    D: np.ndarray
    numbers_used: float = 0.0
    count: int = 0
    order: list[tuple[int, int]] = field(default_factory=list)
    trace: list[str] = field(default_factory=list)

    @classmethod
    def empty(cls, problem: SelectionProblem) -> "SelectionState":
        K = problem.K
        stored = [np.empty(0, dtype=np.int64) for _ in range(K)]
        resid = problem.coeffs.copy()
        D = np.abs(resid).max(axis=0) ** 2
        return cls(stored, resid, D)

    def unstored_count(self, k: int, n: int) -> int:
        return n - self.stored[k].size


def _refresh_frequency(problem: SelectionProblem, state: SelectionState,
                       k: int, kappa: float) -> None:
    """Recompute the residual row and score at frequency k from scratch."""
    n = problem.grid.n
    stored_px = state.stored[k]
    if stored_px.size == 0:
        resid = problem.coeffs[:, k].copy()
    else:
        part, z1 = problem.vertex_partition(k, stored_px)
        Q = problem.op.precision(kappa)
        zhat2, _ = conditional_system(Q, part, z1)
        zv = np.zeros(problem.mesh.n_vertices, dtype=complex)
        zv[part.stored] = z1
        zv[part.unstored] = zhat2
        pred = problem.mesh.expand_vertex_values(zv) * problem.sqrt_f[:, k]
        resid = problem.coeffs[:, k] - pred
        resid[stored_px] = 0.0
    state.resid[:, k] = resid
    if stored_px.size >= n:
        state.D[k] = -np.inf
    else:
        mask = np.ones(n, dtype=bool)
        mask[stored_px] = False
        state.D[k] = float(np.max(np.abs(resid[mask]) ** 2))


def _add_batch(problem, state, k, batch, cost):
    if batch.size == 0:
        return
    state.stored[k] = np.sort(np.concatenate([state.stored[k], batch]))
    state.order.extend((k, int(p)) for p in batch)
    state.numbers_used += cost * batch.size
    state.count += batch.size


def estimate_initial_kappa(problem: SelectionProblem,
                           kappa: CoherenceParams | None = None,
                           threads: int = 1) -> CoherenceParams:
    """Marginal-likelihood estimates at every non-pinned frequency."""
    K = problem.K
    if kappa is None:
        kappa = CoherenceParams.pinned_low_frequencies(K)
    values = kappa.kappa.copy()

    def fit(k):
        if kappa.fixed_mask[k]:
            return values[k]
        z, lf = problem.vertex_row(k)
        return estimate_kappa("marginal", problem.op, None, z, lf).kappa

    values = np.asarray(parallel_map(fit, list(range(K)), threads))
    return CoherenceParams(values, kappa.fixed_mask.copy())


def _reestimate_kappa(problem, state, kappa: CoherenceParams, threads: int,
                      label: str) -> CoherenceParams:
    """Conditional-likelihood re-estimation at every non-pinned frequency."""
    values = kappa.kappa.copy()

    def fit(k):
        if kappa.fixed_mask[k]:
            return values[k]
        part, z1 = problem.vertex_partition(k, state.stored[k]) \
            if state.stored[k].size else (None, None)
        z, lf = problem.vertex_row(k)
        if part is not None:
            z = z.copy()
            z[part.stored] = z1
        else:
            part = FrequencyPartition.from_stored(k, [], problem.mesh.n_vertices)
        if part.unstored.size == 0:
            return values[k]
        return estimate_kappa("conditional", problem.op, part, z, lf).kappa

    values = np.asarray(parallel_map(fit, list(range(problem.K)), threads))
    out = CoherenceParams(values, kappa.fixed_mask.copy())
    state.trace.append(f"reestimate {label} kappa_min={values.min():.4g} "
                       f"kappa_max={values.max():.4g} stored={state.count}")
    return out


def run_selection(problem: SelectionProblem, config: SelectionConfig,
                  budget: BudgetReport, kappa: CoherenceParams,
                  threads: int = 1, reserve: float = 0.0
                  ) -> tuple[SelectionState, CoherenceParams]:
    """Run the greedy search until the number budget is exhausted.

    reserve is subtracted from the budget up front to cover container
    overhead beyond the planning burden (header bytes, odd-T rounding).
    """
    n = problem.grid.n
    K = problem.K
    realf = real_frequencies(problem.T)
    cost = np.array([budget.coefficient_cost(bool(realf[k])) for k in range(K)])
    limit = budget.remaining - reserve
    if limit <= 0:
        raise BudgetError("budget exhausted by container overhead")
    state = SelectionState.empty(problem)

    # low-resolution seed grids at the two lowest frequencies
    seeds = seed_grid(problem.grid, config.seed_strides)
    for k in (0, 1):
        if k >= K:
            break
        need = cost[k] * seeds.size
        if state.numbers_used + need > limit:
            raise BudgetError("seed grids do not fit in the budget; "
                              "reduce the ratio or enlarge the strides")
        _add_batch(problem, state, k, seeds.copy(), cost[k])
        state.trace.append(f"seed k={k} size={seeds.size} stored={state.count}")

    def refresh(ks):
        parallel_map(
            lambda k: _refresh_frequency(problem, state, k, kappa.kappa[k]),
            list(ks), threads)

    refresh(range(K))

    # milestone schedule for the J re-estimation stops
    per_coeff = budget.coefficient_cost(False)
    n_plan = state.count + int((limit - state.numbers_used) // per_coeff)
    milestones = [math.ceil(j * n_plan / (config.J + 1)) for j in range(1, config.J + 1)]
    milestones = [m for m in milestones if m > state.count]
    next_stop = 0

    def maybe_reestimate():
        nonlocal next_stop, kappa
        if next_stop < len(milestones) and state.count >= milestones[next_stop]:
            while next_stop < len(milestones) and state.count >= milestones[next_stop]:
                next_stop += 1
            kappa = _reestimate_kappa(problem, state, kappa, threads,
                                      f"stop_{next_stop}")
            refresh(range(K))

    def affordable(k):
        return int((limit - state.numbers_used) // cost[k])

    if config.variant == "sequential":
        while True:
            maybe_reestimate()
            live = [k for k in range(K)
                    if state.unstored_count(k, n) > 0 and affordable(k) > 0
                    and state.D[k] > 0.0]
            if not live:
                break
            kstar = max(live, key=lambda k: (state.D[k], -k))
            m = min(config.M, affordable(kstar))
            taken = problem.coords[state.stored[kstar]] if config.dmin_cross_batch else None
            batch = pick_batch(state.resid[:, kstar],
                               _unstored_pixels(state, kstar, n),
                               problem.coords, m, config.d_min, taken)
            if batch.size == 0:
                state.D[kstar] = 0.0
                continue
            _add_batch(problem, state, kstar, batch, cost[kstar])
            _refresh_frequency(problem, state, kstar, kappa.kappa[kstar])
            state.trace.append(f"batch k={kstar} size={batch.size} "
                               f"D={state.D[kstar]:.6g} stored={state.count}")
    else:
        while True:
            maybe_reestimate()
            cap = np.array([state.unstored_count(k, n) for k in range(K)])
            cap[state.D <= 0.0] = 0
            if not np.any((cap > 0) & (np.array([affordable(k) for k in range(K)]) > 0)):
                break
            scores = np.where(cap > 0, np.maximum(state.D, 0.0), 0.0)
            if scores.sum() <= 0.0:
                break
            m_k = allocate_m_k(scores, config.M, capacity=cap)
            touched = []
            added = 0
            for k in range(K):
                take = min(int(m_k[k]), affordable(k))
                if take < 1:
                    continue
                taken = problem.coords[state.stored[k]] if config.dmin_cross_batch else None
                batch = pick_batch(state.resid[:, k],
                                   _unstored_pixels(state, k, n),
                                   problem.coords, take, config.d_min, taken)
                if batch.size:
                    _add_batch(problem, state, k, batch, cost[k])
                    touched.append(k)
                    added += batch.size
            if not touched:
                break
            refresh(touched)
            state.trace.append(
                f"sweep freqs={len(touched)} added={added} stored={state.count}")

    kappa = _reestimate_kappa(problem, state, kappa, threads, "final")
    return state, kappa


def _unstored_pixels(state: SelectionState, k: int, n: int) -> np.ndarray:
    mask = np.ones(n, dtype=bool)
    mask[state.stored[k]] = False
    return np.nonzero(mask)[0]
