"""Snapshot-based reduced basis, Galerkin reduced model and output error indicators.

The reduced basis ``V`` (``n x m``, orthonormal columns) is grown online from
full-model states.  For a parameter ``x`` the reduced state solves

    V^T A(x) V u_m = -V^T q(x),        d_m = C V u_m.

Full states satisfy the boundary side condition ``c^T u = 0`` and so does
every linear combination of them, so the reduced system needs no extra
constraint row.  The load is first made compatible with the Neumann operator
(``q <- q + c lam`` with the closed-form multiplier) so that the reduced model
of the constrained problem is an ordinary SPD Galerkin system.

Output errors are indicated with a dual weighted residual.  The exact error of
output ``j`` is ``z_j^T r`` with ``A z_j = C_j^T`` and the full residual
``r = -(A V u_m + q)``.  The duals are approximated by Galerkin projection onto
a dual space ``W`` spanned by exact adjoint solutions at the most recent
enrichment point.  A dual space equal to ``V`` would return zero by Galerkin
orthogonality, which is why ``W`` is kept separately.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import scipy.linalg as sla

from .errors import BasisCapacityError, NumericalError, StateError

logger = logging.getLogger(__name__)

DEPENDENCE_TOL = 1e-10


# ---------------------------------------------------------------------------
# basis
# ---------------------------------------------------------------------------


@dataclass
class SnapshotRecord:
    x: Optional[np.ndarray]
    meta: dict = field(default_factory=dict)


class ReducedBasis:
    """Orthonormal columns grown by modified Gram-Schmidt.

    Parameters
    ----------
    n : int
        Length of the full state vector.
    max_dim : int
        Cap ``M`` on the number of columns.
    dep_tol : float
        A new vector is dropped as dependent if its norm after
        orthogonalisation falls below ``dep_tol`` times its original norm.
    """

    def __init__(self, n: int, max_dim: int, dep_tol: float = DEPENDENCE_TOL):
        if max_dim < 1:
            raise ValueError("max_dim must be >= 1")
        self.n = int(n)
        self.max_dim = int(max_dim)
        self.dep_tol = float(dep_tol)
        self._V = np.zeros((self.n, min(self.max_dim, 64)), order="F")
        self.m = 0
        self.generation = 0
        self.snapshots: list[SnapshotRecord] = []
        self.dual: Optional[np.ndarray] = None
        self.dual_x: Optional[np.ndarray] = None

    @property
    def columns(self) -> np.ndarray:
        return self._V[:, : self.m]

    @property
    def full(self) -> bool:
        return self.m >= self.max_dim

    def __len__(self) -> int:
        return self.m

    def _grow(self):
        cap = min(self.max_dim, 2 * self._V.shape[1])
        V = np.zeros((self.n, cap), order="F")
        V[:, : self.m] = self._V[:, : self.m]
        self._V = V

    def add(self, u: np.ndarray, x=None, meta: Optional[dict] = None) -> bool:
        """Orthonormalise ``u`` against the basis and append it.

        Returns False (basis unchanged) when ``u`` is numerically dependent.
        Raises BasisCapacityError when the basis already holds ``max_dim`` columns.
        """
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n,):
            raise ValueError(f"expected a vector of length {self.n}, got {u.shape}")
        if not np.all(np.isfinite(u)):
            raise NumericalError("snapshot contains non-finite entries")
        if self.full:
            raise BasisCapacityError(f"basis already holds {self.max_dim} vectors")
        norm0 = np.linalg.norm(u)
        if norm0 == 0.0:
            return False
        w = u / norm0
        V = self._V
        for _ in range(2):
            for j in range(self.m):
                w -= (V[:, j] @ w) * V[:, j]
        nw = np.linalg.norm(w)
        if nw < self.dep_tol:
            logger.debug("snapshot rejected as dependent (relative norm %.2e)", nw)
            return False
        if self.m == self._V.shape[1]:
            self._grow()
        self._V[:, self.m] = w / nw
        self.m += 1
        self.generation += 1
        self.snapshots.append(SnapshotRecord(None if x is None else np.array(x, float), dict(meta or {})))
        return True

    @classmethod
    def from_columns(cls, V: np.ndarray, max_dim: Optional[int] = None, orthonormalise: bool = True):
        """Basis from given columns (e.g. POD modes)."""
        V = np.asarray(V, float)
        n, k = V.shape
        b = cls(n, max(k, max_dim or k, 1))
        if orthonormalise:
            for j in range(k):
                b.add(V[:, j])
        else:
            while b._V.shape[1] < k:
                b._grow()
            b._V[:, :k] = V
            b.m = k
            b.generation = k
            b.snapshots = [SnapshotRecord(None) for _ in range(k)]
        return b

    def copy(self) -> "ReducedBasis":
        b = ReducedBasis(self.n, self.max_dim, self.dep_tol)
        b._V = self._V.copy(order="F")
        b.m, b.generation = self.m, self.generation
        b.snapshots = [SnapshotRecord(None if s.x is None else s.x.copy(), dict(s.meta)) for s in self.snapshots]
        b.dual = None if self.dual is None else self.dual.copy()
        b.dual_x = None if self.dual_x is None else self.dual_x.copy()
        return b

    def truncated(self, m: int) -> "ReducedBasis":
        """Copy holding only the first ``m`` columns (duals are kept)."""
        b = self.copy()
        b.m = min(m, self.m)
        b.snapshots = b.snapshots[: b.m]
        b.generation = b.m
        return b


def enrich(basis: ReducedBasis, u_new, x=None, meta=None) -> bool:
    """Append ``u_new`` to ``basis`` by Gram-Schmidt; see :meth:`ReducedBasis.add`."""
    return basis.add(u_new, x=x, meta=meta)


# ---------------------------------------------------------------------------
# basis file
# ---------------------------------------------------------------------------

BASIS_MAGIC = b"RBAS"
BASIS_VERSION = 1
_HEADER = struct.Struct("<4sI6Q")


def save_basis(path, basis: ReducedBasis, max_dim: Optional[int] = None) -> None:
    """Write ``basis`` to ``path``.

    Layout (little-endian): magic ``RBAS``, uint32 version, then uint64
    ``n, m, generation, p, k, r`` where ``p`` is the parameter dimension,
    ``k`` the number of snapshot-table rows and ``r`` the number of dual
    columns.  Follow: ``V`` as ``n*m`` float64 in column-major order, the
    snapshot table as ``k*p`` float64 row-major (NaN rows for columns with no
    parameter), ``r`` dual columns column-major (``n*r`` float64), the dual
    anchor parameter (``p`` float64, present iff ``r > 0``), and finally the
    uint64 basis cap ``M``.
    """
    xs = [s.x for s in basis.snapshots]
    p = next((len(x) for x in xs if x is not None), 0)
    if basis.dual_x is not None:
        p = max(p, len(basis.dual_x))
    table = np.full((len(xs), p), np.nan)
    for i, x in enumerate(xs):
        if x is not None:
            table[i] = x
    r = 0 if basis.dual is None else basis.dual.shape[1]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(BASIS_MAGIC, BASIS_VERSION, basis.n, basis.m, basis.generation, p, len(xs), r))
        fh.write(np.asfortranarray(basis.columns).tobytes(order="F"))
        fh.write(table.astype("<f8").tobytes(order="C"))
        if r:
            fh.write(np.asfortranarray(basis.dual).astype("<f8").tobytes(order="F"))
            dx = np.full(p, np.nan) if basis.dual_x is None else basis.dual_x
            fh.write(np.asarray(dx, "<f8").tobytes())
        fh.write(struct.pack("<Q", max_dim or basis.max_dim))


def load_basis(path) -> ReducedBasis:
    data = Path(path).read_bytes()
    magic, version, n, m, gen, p, k, r = _HEADER.unpack_from(data, 0)
    if magic != BASIS_MAGIC:
        raise ValueError(f"{path}: not a basis file")
    if version != BASIS_VERSION:
        raise ValueError(f"{path}: unsupported basis file version {version}")
    off = _HEADER.size

    def take(count):
        nonlocal off
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(float)
        off += 8 * count
        return arr

    V = take(n * m).reshape((n, m), order="F")
    table = take(k * p).reshape(k, p)
    dual = dual_x = None
    if r:
        dual = take(n * r).reshape((n, r), order="F")
        dual_x = take(p)
    (max_dim,) = struct.unpack_from("<Q", data, off)
    b = ReducedBasis.from_columns(V, max_dim=max_dim, orthonormalise=False)
    b.generation = gen
    b.snapshots = [SnapshotRecord(None if np.all(np.isnan(row)) else row.copy()) for row in table]
    b.dual = dual
    b.dual_x = None if dual_x is None or np.all(np.isnan(dual_x)) else dual_x
    return b


# ---------------------------------------------------------------------------
# projection and reduced model
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class ReducedSystem:
    stiffness: np.ndarray
    load: np.ndarray
    generation: int


@dataclass(eq=False)
class ErrorVector:
    """Noise-scaled output discrepancy, either true (``kind='true'``) or indicated."""

    values: np.ndarray
    kind: str

    @property
    def inf_norm(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0


@dataclass(eq=False)
class ReducedSolution:
    x: np.ndarray
    coeffs: np.ndarray
    outputs: np.ndarray
    generation: int
    _system: Any = field(default=None, repr=False)
    _residual: Optional[np.ndarray] = field(default=None, repr=False)


def compatible_load(system) -> np.ndarray:
    """Load with the boundary-constraint multiplier folded in (equals ``q`` without a constraint)."""
    q = system.load
    if system.constraint is None:
        return q
    lam = -(system.nullspace @ q) / (system.constraint @ system.nullspace)
    return q + lam * system.constraint


def project(basis: ReducedBasis, system) -> ReducedSystem:
    """Galerkin projection ``A_m = V^T A V``, ``q_m = V^T q``."""
    if basis.m == 0:
        raise StateError("cannot project onto an empty basis")
    V = basis.columns
    Am = V.T @ (system.stiffness @ V)
    Am = 0.5 * (Am + Am.T)
    return ReducedSystem(Am, V.T @ compatible_load(system), basis.generation)


def _whitening(noise) -> np.ndarray:
    std = getattr(noise, "std", noise)
    return 1.0 / np.asarray(std, dtype=float)


class ReducedOrderModel:
    """Galerkin reduced model of a forward model for a mutable :class:`ReducedBasis`.

    When the forward model exposes an affine decomposition the projected
    operators of every term are cached per basis generation and recombined
    for each ``x``; otherwise ``A(x)`` is assembled and projected per call.

    Parameters
    ----------
    model : forward model
        Must provide ``assemble(x)``, ``solve(x)``, ``observation.matrix`` and
        ``affine`` (possibly ``None``).
    basis : ReducedBasis
    noise : NoiseModel or array_like
        Per-output noise standard deviations used to scale errors.
    """

    def __init__(self, model, basis: ReducedBasis, noise, use_affine: bool = True):
        self.model = model
        self.basis = basis
        self.winv = _whitening(noise)
        self.C = model.observation.matrix
        self.affine = model.affine if use_affine else None
        self._gen = None
        self._dual_key = None
        if self.affine is not None:
            c = getattr(model, "constraint", None)
            z = getattr(model, "nullspace", None)
            self._loads = [q if c is None else q - (z @ q) / (c @ z) * c for q in self.affine.load_terms]
            self._ops = list(self.affine.operator_terms)

    @property
    def m(self) -> int:
        return self.basis.m

    # -- caches -------------------------------------------------------------

    def _refresh(self):
        if self.basis.m == 0:
            raise StateError("reduced model needs a nonempty basis")
        if self._gen == self.basis.generation and self._V_m == self.basis.m:
            return
        V = self.basis.columns
        self.CV = np.asarray(self.C @ V)
        if self.affine is not None:
            self._AkV = [np.asarray(A @ V) for A in self._ops]
            self._VAkV = np.stack([V.T @ AV for AV in self._AkV])
            self._VAkV = 0.5 * (self._VAkV + self._VAkV.transpose(0, 2, 1))
            self._Vq = np.stack([V.T @ q for q in self._loads])
        self._gen = self.basis.generation
        self._V_m = self.basis.m
        self._dual_key = None

    def _refresh_dual(self):
        W = self.basis.dual
        if W is None:
            raise StateError("no dual basis available; enrich with a full state first")
        key = (id(W), self._gen)
        if self._dual_key == key:
            return
        self.G = np.asarray(self.C @ W).T  # r x N_d
        if self.affine is not None:
            AkW = [np.asarray(A @ W) for A in self._ops]
            self._WAkW = np.stack([W.T @ AW for AW in AkW])
            self._WAkW = 0.5 * (self._WAkW + self._WAkW.transpose(0, 2, 1))
            self._WAkV = np.stack([W.T @ AV for AV in self._AkV])
            self._Wq = np.stack([W.T @ q for q in self._loads])
        self._dual_key = key

    # -- evaluation ---------------------------------------------------------

    def project(self, x) -> ReducedSystem:
        self._refresh()
        if self.affine is not None:
            th = self.affine.operator_coeffs(x)
            ph = self.affine.load_coeffs(x)
            m = self.basis.m
            Am = (th @ self._VAkV.reshape(len(th), m * m)).reshape(m, m)
            qm = ph @ self._Vq
            return ReducedSystem(Am, qm, self.basis.generation)
        return project(self.basis, self.model.assemble(x))

    def solve(self, x) -> ReducedSolution:
        """Reduced state coefficients and outputs at ``x``."""
        x = np.asarray(x, dtype=float)
        self._refresh()
        system = None
        if self.affine is not None:
            if hasattr(self.model, "permeability"):
                self.model.permeability(x)  # admissibility check only
            rs = self.project(x)
        else:
            system = self.model.assemble(x)
            rs = project(self.basis, system)
        try:
            u_m = np.linalg.solve(rs.stiffness, -rs.load)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"reduced system is singular: {exc}") from exc
        if not np.all(np.isfinite(u_m)):
            raise NumericalError("reduced solve produced non-finite coefficients")
        return ReducedSolution(x, u_m, self.CV @ u_m, self.basis.generation, system)

    def residual(self, sol: ReducedSolution) -> np.ndarray:
        """Full residual ``r = -(A V u_m + q)`` of a reduced solution."""
        system = sol._system if sol._system is not None else self.model.assemble(sol.x)
        V = self.basis.columns
        return -(system.stiffness @ (V @ sol.coeffs) + compatible_load(system))

    def indicator_from_residual(self, r: np.ndarray, x) -> ErrorVector:
        """Dual weighted residual estimate for a given full residual vector."""
        self._refresh()
        self._refresh_dual()
        W = self.basis.dual
        S = self._dual_operator(x)
        s = W.T @ r
        return ErrorVector(self._apply_dual(S, s), "indicated")

    def _dual_operator(self, x):
        if self.affine is not None:
            return np.tensordot(self.affine.operator_coeffs(x), self._WAkW, axes=1)
        W = self.basis.dual
        S = W.T @ (self.model.assemble(x).stiffness @ W)
        return 0.5 * (S + S.T)

    def _apply_dual(self, S, s):
        try:
            w = np.linalg.solve(S, s)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"reduced dual system is singular: {exc}") from exc
        return (self.G.T @ w) * self.winv

    def indicator(self, sol: ReducedSolution) -> ErrorVector:
        """Indicated scaled output error; needs no full solve."""
        self._refresh()
        if sol.generation != self.basis.generation:
            raise StateError("reduced solution is stale; the basis changed since it was computed")
        self._refresh_dual()
        x = sol.x
        if self.affine is not None:
            th = self.affine.operator_coeffs(x)
            ph = self.affine.load_coeffs(x)
            K, r = len(th), self._WAkW.shape[1]
            S = (th @ self._WAkW.reshape(K, r * r)).reshape(r, r)
            s = -((th @ self._WAkV.reshape(K, -1)).reshape(r, -1) @ sol.coeffs + ph @ self._Wq)
        else:
            system = sol._system if sol._system is not None else self.model.assemble(x)
            W = self.basis.dual
            S = W.T @ (system.stiffness @ W)
            S = 0.5 * (S + S.T)
            s = W.T @ self.residual(sol)
        return ErrorVector(self._apply_dual(S, s), "indicated")

    def true_error(self, x, full_outputs=None, reduced: Optional[ReducedSolution] = None) -> ErrorVector:
        """``Sigma_e^{-1/2} (F(x) - F_m(x))``; performs a full solve unless outputs are supplied."""
        if full_outputs is None:
            full_outputs = self.C @ self.model.solve(x).u
        if reduced is None:
            reduced = self.solve(x)
        return ErrorVector((full_outputs - reduced.outputs) * self.winv, "true")

    # -- adaptation ---------------------------------------------------------

    def set_dual(self, state, x=None) -> None:
        """Rebuild the dual space from exact adjoint solutions of a full state."""
        Z = state.solve_adjoint(np.asarray(self.C.T.toarray() if hasattr(self.C, "toarray") else self.C.T))
        Z = np.atleast_2d(Z.T).T
        # pivoted QR is rank revealing; adjoints can be dependent on coarse meshes
        Q, R, _ = sla.qr(Z, mode="economic", pivoting=True)
        d = np.abs(np.diag(R))
        rank = int(np.sum(d > 1e-12 * d[0])) if d.size and d[0] > 0 else 0
        self.basis.dual = np.asfortranarray(Q[:, :rank])
        self.basis.dual_x = None if x is None else np.array(x, float)
        self._dual_key = None

    def enrich(self, x, state, meta: Optional[dict] = None) -> bool:
        """Add the full state at ``x`` to the basis and refresh the dual space."""
        added = self.basis.add(state.u, x=x, meta=meta)
        if added:
            self.set_dual(state, x)
        return added


def solve_reduced(rom: ReducedOrderModel, x) -> ReducedSolution:
    return rom.solve(x)


def true_scaled_error(rom: ReducedOrderModel, x, full_outputs=None) -> ErrorVector:
    return rom.true_error(x, full_outputs)


def error_indicator(rom: ReducedOrderModel, sol: ReducedSolution) -> ErrorVector:
    return rom.indicator(sol)


# ---------------------------------------------------------------------------
# prior-based POD
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class PodSpectrum:
    eigenvalues: np.ndarray
    retained: int
    criterion: float

    def trailing_energy(self, k: int) -> float:
        """Relative 2-norm of the eigenvalues beyond the first ``k``."""
        lam = self.eigenvalues
        return float(np.linalg.norm(lam[k:]) / np.linalg.norm(lam))


def pod_truncation(eigenvalues, criterion: float) -> int:
    """Smallest ``k`` whose trailing relative eigenvalue 2-norm is at most ``criterion``."""
    lam = np.asarray(eigenvalues, float)
    total = np.linalg.norm(lam)
    if total == 0.0:
        return 0
    # tail[k] = || lam[k:] ||, computed from the small end to avoid cancellation
    tail = np.sqrt(np.cumsum((lam[::-1] / total) ** 2)[::-1])
    tail = np.append(tail, 0.0)
    ok = np.flatnonzero(tail <= criterion)
    return max(int(ok[0]), 1)


def pod_from_snapshots(S: np.ndarray, criterion: float, max_dim: Optional[int] = None):
    """POD of the snapshot columns of ``S`` by the method of snapshots (no mean subtraction)."""
    S = np.asarray(S, float)
    n, N = S.shape
    if N < 2:
        raise ValueError("POD needs at least two snapshots")
    small = N <= n
    G = S.T @ S if small else S @ S.T
    d = G.shape[0]
    lam = sla.eigh(G, eigvals_only=True, driver="evd")[::-1]
    lam = np.clip(lam, 0.0, None)
    k = pod_truncation(lam, criterion)
    w, Y = sla.eigh(G, subset_by_index=[d - k, d - 1], overwrite_a=True)
    del G
    w, Y = w[::-1], Y[:, ::-1]
    if small:
        # left singular vectors from the right ones
        U = S @ (Y / np.sqrt(np.maximum(w, np.finfo(float).tiny)))
    else:
        U = Y
    basis = ReducedBasis.from_columns(U, max_dim=max(max_dim or k, k))
    return basis, PodSpectrum(lam, basis.m, float(criterion))


def pod_from_prior(model, prior, n_samples: int, energy_criterion: float, rng: np.random.Generator,
                   max_dim: Optional[int] = None):
    """POD basis from full solutions at ``n_samples`` prior draws.

    Draws whose forward solve fails are skipped and redrawn.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    S = np.empty((model.n_state, n_samples))
    j = 0
    failures = 0
    while j < n_samples:
        x = prior.sample(rng)
        try:
            S[:, j] = model.solve(x).u
        except NumericalError:
            failures += 1
            if failures > n_samples:
                raise
            continue
        j += 1
        if j % 1000 == 0:
            logger.info("POD snapshots: %d / %d", j, n_samples)
    if failures:
        logger.warning("POD: %d prior draws failed to solve and were redrawn", failures)
    return pod_from_snapshots(S, energy_criterion, max_dim)
