"""Triangulated sphere mesh, FEM assembly, Matern precision matrices, sparse Cholesky.

The spatial coherence at each frequency is a Matern field of smoothness 1 and
unit variance on the unit sphere, represented through its stochastic PDE
discretization: with lumped mass matrix C and stiffness matrix G, the
precision of the vertex field is

    Q(kappa) = tau^2 (kappa^2 C + G) C^{-1} (kappa^2 C + G),
    tau^2 = 1 / (4 pi kappa^2),

which in the planar limit has stationary marginal variance 1 and correlation
(kappa d) K_1(kappa d) at distance d (the inverse range kappa lives on the
unit-sphere chordal scale).  Q is sparse with a two-hop adjacency pattern and
is factored by sparse Cholesky after a fill-reducing symmetric permutation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu, spsolve_triangular

from .gridio import Grid, sphere_coords


class NotPositiveDefiniteError(RuntimeError):
    """Factorization hit a nonpositive pivot; .pivot is its index in the permuted order."""

    def __init__(self, message, pivot):
        super().__init__(message)
        self.pivot = pivot


@dataclass
class SphereMesh:
    """Triangulation of the grid pixels on the unit sphere.

    Pole rows (|lat| = 90) collapse to a single vertex with a triangle fan,
    so pixel_to_vertex is surjective but not injective there.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    pixel_to_vertex: np.ndarray

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def reduce_pixel_values(self, values: np.ndarray) -> np.ndarray:
        """Average pixel values onto vertices (identity when no poles are merged)."""
        v = np.asarray(values)
        counts = np.bincount(self.pixel_to_vertex, minlength=self.n_vertices)
        if v.ndim == 1:
            sums = np.zeros(self.n_vertices, dtype=v.dtype)
            np.add.at(sums, self.pixel_to_vertex, v)
            return sums / counts
        sums = np.zeros((self.n_vertices,) + v.shape[1:], dtype=v.dtype)
        np.add.at(sums, self.pixel_to_vertex, v)
        return sums / counts.reshape((-1,) + (1,) * (v.ndim - 1))

    def expand_vertex_values(self, values: np.ndarray) -> np.ndarray:
        """Broadcast vertex values back to pixels."""
        return np.asarray(values)[self.pixel_to_vertex]


def build_mesh(grid: Grid) -> SphereMesh:
    """Split every lat/lon quad into two triangles, closing the longitude seam."""
    n_lat, n_lon = grid.n_lat, grid.n_lon
    if n_lat < 2 or n_lon < 3:
        raise ValueError("mesh needs at least 2 latitude rows and 3 longitudes")
    coords = sphere_coords(grid)
    pole = np.abs(np.abs(grid.latitudes) - 90.0) < 1e-9

    pixel_to_vertex = np.empty(grid.n, dtype=np.int64)
    vertex_coords = []
    next_vid = 0
    for i in range(n_lat):
        row = slice(i * n_lon, (i + 1) * n_lon)
        if pole[i]:
            pixel_to_vertex[row] = next_vid
            vertex_coords.append(np.array([0.0, 0.0, np.sign(grid.latitudes[i])]))
            next_vid += 1
        else:
            pixel_to_vertex[row] = next_vid + np.arange(n_lon)
            vertex_coords.extend(coords[row])
            next_vid += n_lon
    vertices = np.asarray(vertex_coords)

    tris = []
    for i in range(n_lat - 1):
        lo = pixel_to_vertex[i * n_lon:(i + 1) * n_lon]
        hi = pixel_to_vertex[(i + 1) * n_lon:(i + 2) * n_lon]
        for j in range(n_lon):
            jn = (j + 1) % n_lon
            a, b, c, d = lo[j], lo[jn], hi[j], hi[jn]
            if pole[i]:          # south pole fan: a == b
                tris.append((a, d, c))
            elif pole[i + 1]:    # north pole fan: c == d
                tris.append((a, b, c))
            else:
                tris.append((a, b, c))
                tris.append((c, b, d))
    triangles = np.asarray(tris, dtype=np.int64)

    areas = _triangle_areas(vertices, triangles)
    if np.any(areas <= 1e-14):
        raise ValueError("mesh contains a degenerate triangle")
    return SphereMesh(vertices, triangles, pixel_to_vertex)


def _triangle_areas(vertices, triangles):
    p0 = vertices[triangles[:, 0]]
    p1 = vertices[triangles[:, 1]]
    p2 = vertices[triangles[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(p1 - p0, p2 - p0), axis=1)


def assemble_fem(mesh: SphereMesh) -> tuple[np.ndarray, sp.csr_matrix]:
    """Lumped mass diagonal and stiffness matrix of linear elements.

    Each flat triangle with vertices p0, p1, p2 and area A contributes
    stiffness entries e_i . e_j / (4A), where e_i is the edge opposite
    vertex i, and A/3 of lumped mass to each of its vertices.
    """
    nv = mesh.n_vertices
    tri = mesh.triangles
    p = [mesh.vertices[tri[:, i]] for i in range(3)]
    edges = [p[2] - p[1], p[0] - p[2], p[1] - p[0]]
    areas = _triangle_areas(mesh.vertices, tri)
    if np.any(areas <= 1e-14):
        raise ValueError("degenerate triangle in mesh")

    rows, cols, vals = [], [], []
    for i in range(3):
        for j in range(3):
            rows.append(tri[:, i])
            cols.append(tri[:, j])
            vals.append(np.einsum("td,td->t", edges[i], edges[j]) / (4.0 * areas))
    G = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nv, nv))
    G.sum_duplicates()

    c = np.zeros(nv)
    for i in range(3):
        np.add.at(c, tri[:, i], areas / 3.0)
    return c, G


@dataclass
class SparsePrecision:
    """Sparse SPD precision over mesh vertices for one inverse range kappa."""

    Q: sp.csc_matrix
    kappa: float
    tau: float

    @property
    def shape(self):
        return self.Q.shape


class SpdeOperator:
    """Precomputed FEM matrices for one mesh; builds Q(kappa) cheaply per call."""

    def __init__(self, mesh: SphereMesh):
        self.mesh = mesh
        c, G = assemble_fem(mesh)
        self.mass = c
        self.stiffness = G
        Cinv = sp.diags(1.0 / c)
        self._C = sp.diags(c).tocsc()
        self._G = G.tocsc()
        self._GCG = (G @ Cinv @ G).tocsc()

    def precision(self, kappa: float) -> SparsePrecision:
        if kappa <= 0.0:
            raise ValueError("kappa must be positive")
        tau2 = 1.0 / (4.0 * np.pi * kappa * kappa)
        Q = tau2 * (kappa ** 4 * self._C + 2.0 * kappa ** 2 * self._G + self._GCG)
        return SparsePrecision(Q.tocsc(), float(kappa), float(np.sqrt(tau2)))


def assemble_precision(mesh: SphereMesh, kappa: float) -> SparsePrecision:
    return SpdeOperator(mesh).precision(kappa)


class CholeskyFactor:
    """Sparse Cholesky of an SPD matrix after a fill-reducing symmetric permutation.

    Satisfies Q[perm][:, perm] = L @ L.T with L lower triangular and a strictly
    positive diagonal.  Backed by a SuperLU factorization run in symmetric mode
    with diagonal pivoting, whose minimum-degree column ordering plays the role
    of the fill-reducing permutation.
    """

    def __init__(self, Q, perm: np.ndarray | None = None):
        A = Q.Q if isinstance(Q, SparsePrecision) else Q
        A = sp.csc_matrix(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError("matrix must be square")
        self.n = A.shape[0]
        if perm is not None:
            perm = np.asarray(perm, dtype=np.int64)
            A = A[perm][:, perm].tocsc()
            lu = splu(A, permc_spec="NATURAL", diag_pivot_thresh=0.0,
                      options=dict(SymmetricMode=True))
        else:
            lu = splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                      options=dict(SymmetricMode=True))
        if not np.array_equal(lu.perm_r, lu.perm_c):
            raise NotPositiveDefiniteError(
                "pivoting broke symmetry; matrix is not positive definite", -1)
        d = lu.U.diagonal()
        if np.any(d <= 0.0) or not np.all(np.isfinite(d)):
            pivot = int(np.argmax(~((d > 0.0) & np.isfinite(d))))
            raise NotPositiveDefiniteError(
                f"nonpositive pivot at permuted index {pivot}", pivot)
        self._lu = lu
        self._d = d
        scatter = lu.perm_c if perm is None else np.arange(self.n)
        self._scatter = scatter
        base_perm = np.argsort(scatter)
        if perm is not None:
            # composed with the caller's permutation
            self.perm = perm
        else:
            self.perm = base_perm
        self._user_perm = perm
        self._L = None
        self._Ut = None

    @property
    def L(self) -> sp.csc_matrix:
        """Lower-triangular factor with sqrt-pivot diagonal (built on demand)."""
        if self._L is None:
            self._L = (self._lu.L @ sp.diags(np.sqrt(self._d))).tocsc()
        return self._L

    def nnz(self) -> int:
        return self._lu.L.nnz

    def logdet(self) -> float:
        """log det of the factored matrix: 2 sum log diag(L)."""
        return float(np.log(self._d).sum())

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Q^{-1} b for real or complex right-hand sides (1-D or 2-D)."""
        b = np.asarray(b)
        if b.shape[0] != self.n:
            raise ValueError("dimension mismatch in solve")
        if self._user_perm is not None:
            bp = b[self._user_perm]
            if np.iscomplexobj(b):
                xp = self._lu.solve(np.ascontiguousarray(bp.real)) \
                    + 1j * self._lu.solve(np.ascontiguousarray(bp.imag))
            else:
                xp = self._lu.solve(np.ascontiguousarray(bp, dtype=np.float64))
            x = np.empty_like(xp)
            x[self._user_perm] = xp
            return x
        if np.iscomplexobj(b):
            return self._lu.solve(np.ascontiguousarray(b.real)) \
                + 1j * self._lu.solve(np.ascontiguousarray(b.imag))
        return self._lu.solve(np.ascontiguousarray(b, dtype=np.float64))

    def sample(self, noise: np.ndarray) -> np.ndarray:
        """Solve L^T e' = noise and unpermute; iid N(0,1) noise gives cov Q^{-1}.

        Complex noise is handled componentwise, so CN(0, I) noise (real and
        imaginary parts of variance 1/2 each) yields E[e e^dagger] = Q^{-1}.
        """
        eps = np.asarray(noise)
        if eps.shape[0] != self.n:
            raise ValueError("noise length mismatch")
        if self._Ut is None:
            self._Ut = self._lu.U.tocsr()
        sd = np.sqrt(self._d)
        rhs = sd[:, None] * eps.reshape(self.n, -1) if eps.ndim > 1 else sd * eps
        if np.iscomplexobj(eps):
            y = spsolve_triangular(self._Ut, rhs.real, lower=False) \
                + 1j * spsolve_triangular(self._Ut, rhs.imag, lower=False)
        else:
            y = spsolve_triangular(self._Ut, rhs, lower=False)
        out = y[self._scatter]
        if self._user_perm is not None:
            res = np.empty_like(out)
            res[self._user_perm] = out
            return res
        return out


def factorize(Q, perm: np.ndarray | None = None) -> CholeskyFactor:
    """Permuted sparse Cholesky; pass perm to override the fill-reducing ordering."""
    return CholeskyFactor(Q, perm=perm)


def solve(factor: CholeskyFactor, b: np.ndarray) -> np.ndarray:
    return factor.solve(b)


def logdet(factor: CholeskyFactor) -> float:
    return factor.logdet()


def sample_precision(factor: CholeskyFactor, noise: np.ndarray) -> np.ndarray:
    return factor.sample(noise)
