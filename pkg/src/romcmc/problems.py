"""Ready-made inverse problems: the 9-parameter RBF problem, the KL problem and small toys."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .pde import (AffineForm, AssembledSystem, DarcyModel, GaussianPrior, LogNormalPrior, RBFMap, build_mesh,
                  kl_expansion, observe, solve_full)
from .posterior import Dataset, NoiseModel, Posterior, generate_data

logger = logging.getLogger(__name__)

# documented truth of the 9-parameter problem, one weight per RBF center (row-major from the lower left)
RBF9D_TRUTH = np.array([1.5, 0.7, 1.2, 0.5, 2.0, 0.8, 1.1, 0.6, 1.4])
TOY2D_CENTERS = np.array([[0.3, 0.5], [0.7, 0.5]])
TOY2D_WIDTH = 0.35
TOY2D_TRUTH = np.array([1.5, 0.6])


@dataclass(eq=False)
class Problem:
    name: str
    model: object
    prior: object
    dataset: Dataset
    noise: NoiseModel
    posterior: Posterior
    truth: np.ndarray
    positive: bool

    @property
    def dim(self) -> int:
        return self.model.n_params


def rbf9d(nx: int = 60, snr: float = 50.0, seed: int = 1, sigma0: float = 2.0,
          truth: Optional[np.ndarray] = None) -> Problem:
    """Nine RBF weights with independent log-normal priors and 81 interior sensors."""
    mesh = build_mesh(nx, nx)
    model = DarcyModel(mesh, RBFMap())
    truth = RBF9D_TRUTH.copy() if truth is None else np.asarray(truth, float)
    prior = LogNormalPrior(model.n_params, sigma0)
    ds, noise = generate_data(model, truth, snr, seed, description="rbf9d documented truth")
    return Problem("rbf9d", model, prior, ds, noise, Posterior(model, prior, ds, noise), truth, True)


def gp_truth_log_field(coords: np.ndarray) -> np.ndarray:
    """Smooth log-permeability used as ground truth of the KL problem (not a prior draw)."""
    x, y = coords[:, 0], coords[:, 1]
    bump = lambda cx, cy, w: np.exp(-0.5 * ((x - cx) ** 2 + (y - cy) ** 2) / w**2)  # noqa: E731
    return 1.0 * bump(0.3, 0.7, 0.15) - 0.8 * bump(0.7, 0.3, 0.15) + 0.3 * np.sin(2 * np.pi * x) * np.cos(np.pi * y)


def gp_highdim(nx: int = 60, snr: float = 50.0, seed: int = 2, length_scale: float = 0.25,
               energy: float = 0.9999) -> Problem:
    """Log-permeability with a squared-exponential Gaussian process prior in whitened KL coordinates."""
    mesh = build_mesh(nx, nx)
    pmap = kl_expansion(mesh, length_scale, energy)
    model = DarcyModel(mesh, pmap)
    prior = GaussianPrior(pmap.n_params)
    log_k = gp_truth_log_field(mesh.coords)
    sys_ = model.assemble(np.zeros(pmap.n_params))
    sys_.stiffness = model._asm.stiffness(np.exp(log_k))
    d_true = observe(model.observation, solve_full(sys_).u)
    sigma = np.max(np.abs(d_true)) / snr
    noise = NoiseModel.isotropic(sigma, d_true.size)
    d_obs = d_true + sigma * np.random.default_rng(seed).standard_normal(d_true.size)
    # truth reported as the whitened KL coordinates of the projected field
    truth = (pmap.modes.T @ log_k) / np.sqrt(pmap.eigenvalues)
    ds = Dataset(d_obs, model.observation.sensors, truth, seed, float(snr), "gp_highdim smooth bump field")
    return Problem("gp_highdim", model, prior, ds, noise, Posterior(model, prior, ds, noise), truth, False)


def toy2d(nx: int = 20, snr: float = 50.0, seed: int = 3, sigma0: float = 1.0) -> Problem:
    """Two wide RBF weights on a coarse mesh; small enough for tensor-grid quadrature."""
    mesh = build_mesh(nx, nx)
    model = DarcyModel(mesh, RBFMap(TOY2D_CENTERS, TOY2D_WIDTH))
    prior = LogNormalPrior(2, sigma0)
    ds, noise = generate_data(model, TOY2D_TRUTH, snr, seed, description="toy2d")
    return Problem("toy2d", model, prior, ds, noise, Posterior(model, prior, ds, noise), TOY2D_TRUTH.copy(), True)


# ---------------------------------------------------------------------------
# linear-Gaussian toy with a closed-form posterior
# ---------------------------------------------------------------------------


class _DenseObservation:
    def __init__(self, C):
        self.matrix = np.asarray(C, float)
        self.sensors = None

    @property
    def n_outputs(self):
        return self.matrix.shape[0]


class LinearToyModel:
    """``A u - B x = 0``, ``d = C u`` with fixed SPD ``A``; the forward map is linear in ``x``."""

    def __init__(self, A, B, C=None):
        self.A = sp.csr_matrix(np.asarray(A, float))
        self.B = np.asarray(B, float)
        n = self.A.shape[0]
        self.observation = _DenseObservation(np.eye(n) if C is None else C)
        self.constraint = None
        self.nullspace = None
        self.affine = AffineForm([self.A], [-self.B[:, j] for j in range(self.B.shape[1])],
                                 lambda x: np.ones(1), lambda x: np.asarray(x, float))

    @property
    def n_params(self):
        return self.B.shape[1]

    @property
    def n_state(self):
        return self.A.shape[0]

    @property
    def n_outputs(self):
        return self.observation.n_outputs

    @property
    def forward_matrix(self) -> np.ndarray:
        return self.observation.matrix @ np.linalg.solve(self.A.toarray(), self.B)

    def assemble(self, x):
        return AssembledSystem(self.A, -(self.B @ np.asarray(x, float)))

    def solve(self, x):
        return solve_full(self.assemble(x))

    def forward(self, x):
        return self.observation.matrix @ self.solve(x).u


@dataclass(eq=False)
class LinearGaussianToy:
    problem: Problem
    post_mean: np.ndarray
    post_cov: np.ndarray


def linear_gaussian_toy(seed: int = 4) -> LinearGaussianToy:
    """2D linear-Gaussian inverse problem and its exact posterior moments."""
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    B = np.array([[1.0, 0.3], [-0.2, 0.8]])
    model = LinearToyModel(A, B)
    prior = GaussianPrior(2, mean=np.array([0.5, -0.5]), cov=np.array([[1.0, 0.3], [0.3, 0.8]]))
    truth = np.array([0.8, -0.3])
    G = model.forward_matrix
    noise = NoiseModel(np.array([0.4, 0.3]))
    rng = np.random.default_rng(seed)
    d_obs = G @ truth + noise.std * rng.standard_normal(2)
    ds = Dataset(d_obs, None, truth, seed, None, "linear-Gaussian toy")
    Pi = np.diag(1.0 / noise.variances)
    prec = G.T @ Pi @ G + np.linalg.inv(prior.cov)
    cov = np.linalg.inv(prec)
    mean = cov @ (G.T @ Pi @ d_obs + np.linalg.solve(prior.cov, prior.mean))
    prob = Problem("linear_toy", model, prior, ds, noise, Posterior(model, prior, ds, noise), truth, False)
    return LinearGaussianToy(prob, mean, cov)
