"""Finite element model of steady Darcy flow on the unit square.

The pressure head ``u`` solves ``div(k grad u) + q = 0`` with zero-flux Neumann
conditions on the whole boundary and the side condition that the boundary
integral of ``u`` vanishes.  After discretisation with bilinear quadrilaterals
this reads ``A(x) u + q = 0`` together with ``c^T u = 0``, where ``x`` are the
parameters of a permeability map.

Two permeability maps are provided:

* :class:`RBFMap` -- ``k(r) = sum_i x_i b(r; r_i)`` with Gaussian radial bumps.
  The stiffness matrix is linear in ``x``, which the reduced model exploits.
* :class:`GaussianProcessKL` -- ``k(r) = exp(sum_j x_j sqrt(lam_j) phi_j(r))``,
  a truncated Karhunen-Loeve expansion of a squared-exponential Gaussian
  process on the mesh nodes.

The nonlinear term ``f(x, u)`` of the general discrete form is identically
zero for this model and is not represented.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DomainError, NumericalError

logger = logging.getLogger(__name__)

PLUME_STD = 0.05
PLUME_CENTERS = np.array([[0.3, 0.3], [0.7, 0.3], [0.7, 0.7], [0.3, 0.7]])
PLUME_WEIGHTS = np.array([2.0, -3.0, -2.0, 3.0])

RBF_WIDTH = 0.15
RBF_CENTERS = np.array([[cx, cy] for cy in (0.2, 0.5, 0.8) for cx in (0.2, 0.5, 0.8)])

SOLVE_RTOL = 1e-10


# ---------------------------------------------------------------------------
# mesh
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Mesh:
    """Uniform quadrilateral mesh of ``[0, 1]^2``.

    Nodes are numbered row by row, ``node = j * (nx + 1) + i``.  Element
    connectivity lists the four corners counter-clockwise starting at the
    lower-left one.
    """

    nx: int
    ny: int
    coords: np.ndarray
    elements: np.ndarray
    boundary: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def hx(self) -> float:
        return 1.0 / self.nx

    @property
    def hy(self) -> float:
        return 1.0 / self.ny


def build_mesh(nx: int, ny: int) -> Mesh:
    """Uniform ``nx`` by ``ny`` bilinear quadrilateral mesh of the unit square."""
    for name, val in (("nx", nx), ("ny", ny)):
        if int(val) != val or val < 2:
            raise ValueError(f"{name} must be an integer >= 2, got {val!r}")
    nx, ny = int(nx), int(ny)
    xs = np.linspace(0.0, 1.0, nx + 1)
    ys = np.linspace(0.0, 1.0, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    coords = np.column_stack([X.ravel(), Y.ravel()])

    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny))
    n0 = (jj * (nx + 1) + ii).ravel()
    elements = np.column_stack([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1])

    i_all = np.tile(np.arange(nx + 1), ny + 1)
    j_all = np.repeat(np.arange(ny + 1), nx + 1)
    on_bnd = (i_all == 0) | (i_all == nx) | (j_all == 0) | (j_all == ny)
    boundary = np.flatnonzero(on_bnd)
    return Mesh(nx, ny, coords, elements.astype(np.int64), boundary)


# ---------------------------------------------------------------------------
# reference element
# ---------------------------------------------------------------------------

_XI = np.array([-1.0, 1.0, 1.0, -1.0])
_ETA = np.array([-1.0, -1.0, 1.0, 1.0])


def _shape(xi, eta):
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    return 0.25 * (1.0 + np.multiply.outer(xi, _XI)) * (1.0 + np.multiply.outer(eta, _ETA))


def _shape_grad(xi, eta):
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    dxi = 0.25 * _XI * (1.0 + np.multiply.outer(eta, _ETA))
    deta = 0.25 * _ETA * (1.0 + np.multiply.outer(xi, _XI))
    return dxi, deta


def _gauss_2d(order):
    pts, wts = np.polynomial.legendre.leggauss(order)
    XI, ETA = np.meshgrid(pts, pts)
    W = np.outer(wts, wts)
    return XI.ravel(), ETA.ravel(), W.ravel()


# ---------------------------------------------------------------------------
# source, boundary constraint, sensors
# ---------------------------------------------------------------------------


def plume_density(r) -> np.ndarray:
    """Source density ``q(r)``: four weighted isotropic Gaussian plumes."""
    r = np.atleast_2d(np.asarray(r, dtype=float))
    d2 = ((r[:, None, :] - PLUME_CENTERS[None, :, :]) ** 2).sum(-1)
    dens = np.exp(-0.5 * d2 / PLUME_STD**2) / (2.0 * np.pi * PLUME_STD**2)
    return dens @ PLUME_WEIGHTS


def source_term(mesh: Mesh, order: int = 5) -> np.ndarray:
    """Nodal source vector ``f_a = int_D q(r) phi_a(r) dr``.

    The discrete system uses the load ``q = -f`` so that ``A u + q = 0``.
    """
    xi, eta, w = _gauss_2d(order)
    N = _shape(xi, eta)  # (nq, 4)
    corner = mesh.coords[mesh.elements[:, 0]]
    pts = corner[:, None, :] + np.stack(
        [(xi + 1.0) * 0.5 * mesh.hx, (eta + 1.0) * 0.5 * mesh.hy], axis=-1
    )[None, :, :]
    qv = plume_density(pts.reshape(-1, 2)).reshape(mesh.n_elements, -1)
    det = 0.25 * mesh.hx * mesh.hy
    local = (qv * (w * det)) @ N  # (ne, 4)
    return np.bincount(mesh.elements.ravel(), weights=local.ravel(), minlength=mesh.n_nodes)


def boundary_weights(mesh: Mesh) -> np.ndarray:
    """Vector ``c`` with ``c^T u`` equal to the boundary integral of the bilinear interpolant."""
    c = np.zeros(mesh.n_nodes)
    nx, ny = mesh.nx, mesh.ny
    bottom = np.arange(nx + 1)
    top = ny * (nx + 1) + np.arange(nx + 1)
    left = np.arange(ny + 1) * (nx + 1)
    right = left + nx
    for side, h in ((bottom, mesh.hx), (top, mesh.hx), (left, mesh.hy), (right, mesh.hy)):
        np.add.at(c, side[:-1], 0.5 * h)
        np.add.at(c, side[1:], 0.5 * h)
    return c


def default_sensors(spacing: float = 0.1) -> np.ndarray:
    """Interior sensor grid ``{spacing, ..., 1 - spacing}^2`` (81 points for 0.1)."""
    k = int(round(1.0 / spacing))
    g = np.arange(1, k) * spacing
    X, Y = np.meshgrid(g, g)
    return np.column_stack([X.ravel(), Y.ravel()])


@dataclass(frozen=True, eq=False)
class ObservationOperator:
    sensors: np.ndarray
    matrix: sp.csr_matrix

    @property
    def n_outputs(self) -> int:
        return self.matrix.shape[0]


def _locate(t, n):
    # snap sensors that sit on grid lines so nodal sensors read nodal values exactly
    s = t * n
    r = np.round(s)
    s = np.where(np.abs(s - r) < 1e-9, r, s)
    idx = np.clip(np.floor(s).astype(np.int64), 0, n - 1)
    return idx, 2.0 * (s - idx) - 1.0


def observation_operator(mesh: Mesh, sensors: Optional[np.ndarray] = None) -> ObservationOperator:
    """Bilinear interpolation from nodal values to sensor locations."""
    sensors = default_sensors() if sensors is None else np.atleast_2d(np.asarray(sensors, float))
    if np.any(sensors < 0.0) or np.any(sensors > 1.0):
        raise DomainError("sensors must lie in the unit square")
    ii, xi = _locate(sensors[:, 0], mesh.nx)
    jj, eta = _locate(sensors[:, 1], mesh.ny)
    elems = mesh.elements[jj * mesh.nx + ii]
    N = np.stack([_shape(a, b) for a, b in zip(xi, eta)])
    rows = np.repeat(np.arange(len(sensors)), 4)
    C = sp.csr_matrix((N.ravel(), (rows, elems.ravel())), shape=(len(sensors), mesh.n_nodes))
    C.eliminate_zeros()
    return ObservationOperator(sensors, C)


def observe(C: ObservationOperator, u: np.ndarray) -> np.ndarray:
    """Model outputs ``d = C u``."""
    return C.matrix @ u


# ---------------------------------------------------------------------------
# permeability maps and priors
# ---------------------------------------------------------------------------


class RBFMap:
    """Permeability as a positive combination of Gaussian radial basis functions."""

    is_linear = True

    def __init__(self, centers: Optional[np.ndarray] = None, width: float = RBF_WIDTH):
        if width <= 0:
            raise ValueError("RBF width must be positive")
        self.centers = RBF_CENTERS.copy() if centers is None else np.atleast_2d(np.asarray(centers, float))
        self.width = float(width)

    @property
    def n_params(self) -> int:
        return self.centers.shape[0]

    def basis(self, coords: np.ndarray) -> np.ndarray:
        """Matrix ``B`` with ``B[a, i] = b(r_a; r_i)``."""
        d2 = ((coords[:, None, :] - self.centers[None, :, :]) ** 2).sum(-1)
        return np.exp(-0.5 * d2 / self.width**2)

    def field(self, x, mesh: Mesh) -> np.ndarray:
        return permeability_field(self, x, mesh)


class GaussianProcessKL:
    """Log-permeability expanded in retained eigenvectors of a squared-exponential covariance.

    ``modes`` holds unit-norm eigenvectors on the mesh nodes, ``eigenvalues``
    the matching eigenvalues in descending order.  The parameters are the
    whitened KL weights, so a standard normal prior on them reproduces the
    truncated Gaussian process.
    """

    is_linear = False

    def __init__(self, modes, eigenvalues, length_scale, energy, total_variance):
        self.modes = np.asarray(modes, float)
        self.eigenvalues = np.asarray(eigenvalues, float)
        self.length_scale = float(length_scale)
        self.energy = float(energy)
        self.total_variance = float(total_variance)
        self._scaled = self.modes * np.sqrt(self.eigenvalues)

    @property
    def n_params(self) -> int:
        return self.eigenvalues.size

    def log_field(self, x) -> np.ndarray:
        return self._scaled @ np.asarray(x, float)

    def field(self, x, mesh: Mesh) -> np.ndarray:
        return permeability_field(self, x, mesh)


def kl_expansion(mesh: Mesh, length_scale: float, energy: float) -> GaussianProcessKL:
    """Truncated KL expansion of ``exp(-|r_i - r_j|^2 / (2 s^2))`` on the mesh nodes.

    The kernel factorises over the two coordinate axes, so the node covariance
    is the Kronecker product of two 1D covariances and its eigenpairs are
    products of 1D eigenpairs.  This is exact and avoids the dense
    ``n x n`` eigenproblem.  Eigenvalues below ``1e-12`` of the largest are
    clamped to that floor.
    """
    if not 0.0 < energy <= 1.0:
        raise ValueError("energy must lie in (0, 1]")
    if length_scale <= 0.0:
        raise ValueError("length scale must be positive")
    try:
        xs = np.linspace(0.0, 1.0, mesh.nx + 1)
        ys = np.linspace(0.0, 1.0, mesh.ny + 1)
        wx, vx = np.linalg.eigh(np.exp(-0.5 * (xs[:, None] - xs[None, :]) ** 2 / length_scale**2))
        wy, vy = np.linalg.eigh(np.exp(-0.5 * (ys[:, None] - ys[None, :]) ** 2 / length_scale**2))
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc

    lam = np.multiply.outer(wy, wx).ravel()  # node index j*(nx+1)+i pairs with (wy[j'], wx[i'])
    floor = 1e-12 * lam.max()
    lam = np.maximum(lam, floor)
    order = np.argsort(-lam, kind="stable")
    lam = lam[order]
    total = lam.sum()
    if energy >= 1.0:
        keep = lam.size
    else:
        keep = int(np.searchsorted(np.cumsum(lam), energy * total) + 1)
        keep = min(keep, lam.size)
    jy, ix = np.unravel_index(order[:keep], (wy.size, wx.size))
    modes = vy[:, jy][:, None, :] * vx[:, ix][None, :, :]
    modes = modes.reshape(-1, keep)
    logger.info("KL expansion: %d of %d modes retain %.6f of the variance",
                keep, lam.size, lam[:keep].sum() / total)
    return GaussianProcessKL(modes, lam[:keep], length_scale, energy, total)


def permeability_field(pmap, x, mesh: Mesh) -> np.ndarray:
    """Nodal permeability values for parameters ``x``; raises DomainError if not positive."""
    x = np.asarray(x, dtype=float)
    if x.shape != (pmap.n_params,):
        raise ValueError(f"expected {pmap.n_params} parameters, got shape {x.shape}")
    if isinstance(pmap, GaussianProcessKL):
        if pmap.modes.shape[0] != mesh.n_nodes:
            raise ValueError("KL modes were built for a different mesh")
        k = np.exp(pmap.log_field(x))
    else:
        k = pmap.basis(mesh.coords) @ x
    if not np.all(k > 0.0) or not np.all(np.isfinite(k)):
        raise DomainError("permeability field is not strictly positive")
    return k


class LogNormalPrior:
    """Independent log-normal weights, ``log x_i ~ N(0, sigma0^2)``.

    :meth:`log_density` is the normalised density in ``x`` (it includes the
    ``-log x_i`` Jacobian term), so prior draws from :meth:`sample` and the
    density agree.
    """

    def __init__(self, dim: int, sigma0: float = 2.0):
        if sigma0 <= 0:
            raise ValueError("sigma0 must be positive")
        self.dim = int(dim)
        self.sigma0 = float(sigma0)
        self._const = -self.dim * np.log(self.sigma0 * np.sqrt(2.0 * np.pi))

    def log_density(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0.0) or not np.all(np.isfinite(x)):
            return -np.inf
        lx = np.log(x)
        return float(self._const - np.sum(0.5 * lx**2 / self.sigma0**2 + lx))

    def sample(self, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
        shape = (self.dim,) if size is None else (size, self.dim)
        return np.exp(self.sigma0 * rng.standard_normal(shape))

    def marginal_std(self) -> np.ndarray:
        s2 = self.sigma0**2
        return np.full(self.dim, np.sqrt(np.expm1(s2) * np.exp(s2)))

    def median(self) -> np.ndarray:
        return np.ones(self.dim)


class GaussianPrior:
    """Multivariate normal prior (standard normal by default)."""

    def __init__(self, dim: int, mean=None, cov=None):
        self.dim = int(dim)
        self.mean = np.zeros(dim) if mean is None else np.asarray(mean, float)
        self.cov = np.eye(dim) if cov is None else np.asarray(cov, float)
        self._chol = np.linalg.cholesky(self.cov)
        self._prec = np.linalg.inv(self.cov)
        self._prec = 0.5 * (self._prec + self._prec.T)
        logdet = 2.0 * np.log(np.diag(self._chol)).sum()
        self._const = -0.5 * (self.dim * np.log(2.0 * np.pi) + logdet)

    def log_density(self, x) -> float:
        r = np.asarray(x, float) - self.mean
        return float(self._const - 0.5 * r @ (self._prec @ r))

    def sample(self, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
        shape = (self.dim,) if size is None else (size, self.dim)
        z = rng.standard_normal(shape)
        return self.mean + z @ self._chol.T

    def marginal_std(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    def median(self) -> np.ndarray:
        return self.mean.copy()


# ---------------------------------------------------------------------------
# assembly and solution
# ---------------------------------------------------------------------------


class _BandedPinned:
    """Banded Cholesky of the stiffness with node 0 removed.

    Eliminating the boundary-mean multiplier analytically turns the saddle
    system into a compatible singular Neumann system; pinning one node makes
    it SPD with bandwidth ``nx + 2`` in the row-major numbering.
    """

    def __init__(self, indptr, indices, n, bw):
        rows = np.repeat(np.arange(n), np.diff(indptr))
        cols = indices
        sel = (rows >= 1) & (cols >= rows)
        self.data_idx = np.flatnonzero(sel)
        i, j = rows[sel] - 1, cols[sel] - 1
        self.m = n - 1
        self.bw = bw
        self.flat_idx = (bw + i - j) * self.m + j

    def factor(self, data):
        ab = np.zeros((self.bw + 1) * self.m)
        ab[self.flat_idx] = data[self.data_idx]
        ab = ab.reshape(self.bw + 1, self.m)
        try:
            return sla.cholesky_banded(ab, lower=False, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"stiffness factorisation failed: {exc}") from exc

    @staticmethod
    def solve(cb, b):
        out = np.zeros_like(b, dtype=float)
        out[1:] = sla.cho_solve_banded((cb, False), b[1:], check_finite=False)
        return out


class _Assembler:
    """Maps nodal permeability to stiffness-matrix data, ``data = P @ k``."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        xi, eta, w = _gauss_2d(2)
        N = _shape(xi, eta)  # (4 gauss, 4 nodes)
        dxi, deta = _shape_grad(xi, eta)
        gx, gy = dxi * (2.0 / mesh.hx), deta * (2.0 / mesh.hy)
        det = 0.25 * mesh.hx * mesh.hy
        G = w[:, None, None] * det * (gx[:, :, None] * gx[:, None, :] + gy[:, :, None] * gy[:, None, :])
        # H[c] is the local stiffness contribution per unit nodal permeability at corner c
        H = np.einsum("gc,gab->cab", N, G)
        self.local = H

        E = mesh.elements
        n = mesh.n_nodes
        r = np.repeat(E, 4, axis=1).ravel()
        c = np.tile(E, (1, 4)).ravel()
        pattern = sp.csr_matrix((np.ones_like(r, dtype=float), (r, c)), shape=(n, n))
        pattern.sum_duplicates()
        pattern.sort_indices()
        self.indptr, self.indices = pattern.indptr, pattern.indices
        keys = np.repeat(np.arange(n), np.diff(self.indptr)) * n + self.indices
        pos = np.searchsorted(keys, r * n + c)  # (ne*16,) position of each local entry

        ne = mesh.n_elements
        prow = np.repeat(pos.reshape(ne, 16), 4, axis=1).ravel()
        pcol = np.broadcast_to(E[:, None, :], (ne, 16, 4)).ravel()
        pval = np.broadcast_to(H.reshape(4, 16).T[None, :, :], (ne, 16, 4)).ravel()
        self.P = sp.csr_matrix((pval, (prow, pcol)), shape=(keys.size, n))
        self.band = _BandedPinned(self.indptr, self.indices, n, mesh.nx + 2)

    def stiffness(self, k: np.ndarray) -> sp.csr_matrix:
        n = self.mesh.n_nodes
        return sp.csr_matrix((self.P @ k, self.indices, self.indptr), shape=(n, n))


@dataclass(eq=False)
class AssembledSystem:
    """Discrete system ``A u + q = 0`` with optional side condition ``c^T u = 0``.

    ``nullspace`` is the kernel of ``A`` (constants for the Neumann problem);
    it is ``None`` when ``A`` is nonsingular.
    """

    stiffness: sp.csr_matrix
    load: np.ndarray
    constraint: Optional[np.ndarray] = None
    nullspace: Optional[np.ndarray] = None
    _band: Optional[_BandedPinned] = field(default=None, repr=False)


@dataclass(eq=False)
class FullState:
    """Full-order solution together with a handle for further solves with the same operator."""

    u: np.ndarray
    multiplier: float
    residual: float
    _solver: Callable = field(default=None, repr=False)

    def solve_adjoint(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``A^T z + c mu = rhs``, ``c^T z = 0`` column by column (``A`` is symmetric)."""
        return self._solver(rhs)


def _constrained_solver(system: AssembledSystem):
    """Return ``f(b)`` solving ``A y + c mu = b``, ``c^T y = 0`` (plain ``A y = b`` without constraint)."""
    A, c, z = system.stiffness, system.constraint, system.nullspace
    if c is None:
        n = A.shape[0]
        if n <= 400:
            try:
                cf = sla.cho_factor(A.toarray(), check_finite=False)
            except np.linalg.LinAlgError as exc:
                raise NumericalError(f"stiffness factorisation failed: {exc}") from exc
            return lambda b: sla.cho_solve(cf, b, check_finite=False)
        lu = spla.splu(A.tocsc())
        return lu.solve

    ctz = c @ z

    if system._band is not None:
        cb = system._band.factor(A.data)

        def solve(b):
            b = np.asarray(b, float)
            mu = (z @ b) / ctz
            rhs = b - np.multiply.outer(c, mu)
            y = _BandedPinned.solve(cb, rhs)
            return y - np.multiply.outer(z, (c @ y) / ctz)

        return solve

    n = A.shape[0]
    K = sp.bmat([[A, sp.csr_matrix(c[:, None])], [sp.csr_matrix(c[None, :]), None]]).tocsc()
    try:
        lu = spla.splu(K)
    except RuntimeError as exc:
        raise NumericalError(f"saddle-point factorisation failed: {exc}") from exc

    def solve(b):
        b = np.asarray(b, float)
        ext = np.concatenate([b, np.zeros((1,) + b.shape[1:])], axis=0)
        return lu.solve(ext)[:n]

    return solve


def solve_full(system: AssembledSystem, rtol: float = SOLVE_RTOL) -> FullState:
    """Solve ``A u + q + c lam = 0``, ``c^T u = 0`` by direct factorisation.

    The multiplier is eliminated in closed form (``lam = -1^T q / 1^T c``) and
    the remaining compatible Neumann system is solved with one node pinned,
    then shifted along the constant nullspace to meet the side condition.
    This gives the same solution as the bordered saddle-point system.
    """
    solver = _constrained_solver(system)
    q = system.load
    u = solver(-q)
    A = system.stiffness
    if system.constraint is not None:
        lam = -(system.nullspace @ q) / (system.constraint @ system.nullspace)
        res_vec = A @ u + q + lam * system.constraint
    else:
        lam = 0.0
        res_vec = A @ u + q
    qn = np.linalg.norm(q)
    res = float(np.linalg.norm(res_vec))
    if not np.all(np.isfinite(u)) or res > rtol * max(qn, np.finfo(float).tiny):
        if qn == 0.0 and res == 0.0:
            pass
        else:
            raise NumericalError(f"full solve residual {res:.3e} exceeds {rtol:.1e} * |q|", residual=res)
    return FullState(u=u, multiplier=float(lam), residual=res, _solver=solver)


@dataclass(frozen=True, eq=False)
class AffineForm:
    """``A(x) = sum_k theta_k(x) A_k`` and ``q(x) = sum_j phi_j(x) q_j``."""

    operator_terms: Sequence[sp.csr_matrix]
    load_terms: Sequence[np.ndarray]
    operator_coeffs: Callable[[np.ndarray], np.ndarray]
    load_coeffs: Callable[[np.ndarray], np.ndarray]


def assemble(pmap, x, mesh: Mesh, _asm: Optional[_Assembler] = None, _load=None) -> AssembledSystem:
    """Stiffness, load and boundary constraint for parameters ``x``.

    Convenience wrapper; :class:`DarcyModel` caches the mesh-dependent pieces.
    """
    asm = _asm if _asm is not None else _Assembler(mesh)
    k = permeability_field(pmap, x, mesh)
    q = -source_term(mesh) if _load is None else _load
    return AssembledSystem(asm.stiffness(k), q, boundary_weights(mesh), np.ones(mesh.n_nodes), asm.band)


class DarcyModel:
    """Full-order forward model ``x -> (u, d)`` for one mesh, permeability map and sensor layout."""

    def __init__(self, mesh: Mesh, pmap, sensors: Optional[np.ndarray] = None):
        self.mesh = mesh
        self.pmap = pmap
        self.observation = observation_operator(mesh, sensors)
        self._asm = _Assembler(mesh)
        self.load = -source_term(mesh)
        self.constraint = boundary_weights(mesh)
        self.nullspace = np.ones(mesh.n_nodes)
        self.affine = None
        if pmap.is_linear:
            B = pmap.basis(mesh.coords)
            self._rbf_basis = B
            terms = [self._asm.stiffness(B[:, i]) for i in range(pmap.n_params)]
            self.affine = AffineForm(
                operator_terms=terms,
                load_terms=[self.load],
                operator_coeffs=lambda x: np.asarray(x, float),
                load_coeffs=lambda x: np.ones(1),
            )

    @property
    def n_params(self) -> int:
        return self.pmap.n_params

    @property
    def n_state(self) -> int:
        return self.mesh.n_nodes

    @property
    def n_outputs(self) -> int:
        return self.observation.n_outputs

    def permeability(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.pmap.is_linear:
            if x.shape != (self.n_params,):
                raise ValueError(f"expected {self.n_params} parameters, got shape {x.shape}")
            k = self._rbf_basis @ x
            if not np.all(k > 0.0) or not np.all(np.isfinite(k)):
                raise DomainError("permeability field is not strictly positive")
            return k
        return permeability_field(self.pmap, x, self.mesh)

    def assemble(self, x) -> AssembledSystem:
        k = self.permeability(x)
        return AssembledSystem(self._asm.stiffness(k), self.load, self.constraint,
                               self.nullspace, self._asm.band)

    def solve(self, x) -> FullState:
        return solve_full(self.assemble(x))

    def forward(self, x) -> np.ndarray:
        return observe(self.observation, self.solve(x).u)
