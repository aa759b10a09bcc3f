"""Gaussian noise model, data misfit and full/reduced unnormalised log posteriors."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .errors import DomainError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Independent Gaussian noise with per-output standard deviations ``std``."""

    std: np.ndarray

    def __post_init__(self):
        std = np.atleast_1d(np.asarray(self.std, dtype=float))
        if np.any(~np.isfinite(std)) or np.any(std <= 0.0):
            raise ValueError("noise standard deviations must be positive and finite")
        object.__setattr__(self, "std", std)

    @classmethod
    def isotropic(cls, sigma: float, n_outputs: int) -> "NoiseModel":
        return cls(np.full(n_outputs, float(sigma)))

    @property
    def variances(self) -> np.ndarray:
        return self.std**2

    def whiten(self, v) -> np.ndarray:
        return np.asarray(v, float) / self.std

    def unwhiten(self, v) -> np.ndarray:
        return np.asarray(v, float) * self.std


@dataclass(eq=False)
class Dataset:
    d_obs: np.ndarray
    sensors: Optional[np.ndarray] = None
    truth: Optional[np.ndarray] = None
    seed: Optional[int] = None
    snr: Optional[float] = None
    description: str = ""

    @property
    def n_outputs(self) -> int:
        return self.d_obs.size


def generate_data(model, truth_x, snr: float, seed: int, description: str = ""):
    """Synthetic data ``d_obs = F(truth) + e`` with ``sigma = max_j |F(truth)_j| / snr``."""
    if not snr > 0:
        raise ValueError("snr must be positive")
    truth_x = np.asarray(truth_x, float)
    d_true = np.asarray(model.forward(truth_x), float)
    sigma = np.max(np.abs(d_true)) / snr
    noise = NoiseModel.isotropic(sigma, d_true.size)
    rng = np.random.default_rng(seed)
    d_obs = d_true + sigma * rng.standard_normal(d_true.size)
    sensors = getattr(getattr(model, "observation", None), "sensors", None)
    return Dataset(d_obs, sensors, truth_x, seed, float(snr), description), noise


def log_prior(prior, x) -> float:
    """Normalised log prior density; ``-inf`` outside the support."""
    return prior.log_density(x)


def misfit(outputs, dataset: Dataset, noise: NoiseModel) -> float:
    """Data misfit ``0.5 * || Sigma_e^{-1/2} (outputs - d_obs) ||^2``."""
    r = noise.whiten(np.asarray(outputs, float) - dataset.d_obs)
    return 0.5 * float(r @ r)


@dataclass(eq=False)
class PosteriorEvaluation:
    """One density evaluation; ``kind`` is ``'full'`` or ``'reduced'``."""

    x: np.ndarray
    log_density: float
    misfit: float
    outputs: Optional[np.ndarray]
    kind: str
    wall_time_ns: int
    log_prior: float = 0.0
    state: Any = field(default=None, repr=False)

    @property
    def admissible(self) -> bool:
        return np.isfinite(self.log_density)


class Posterior:
    """Unnormalised log posterior ``log pi_0(x) - Phi(x)`` for a forward model and dataset.

    ``offset`` shifts every log density by a constant; sampler decisions must
    not depend on it.
    """

    def __init__(self, model, prior, dataset: Dataset, noise: NoiseModel, offset: float = 0.0):
        if dataset.n_outputs != model.n_outputs:
            raise ValueError("dataset and model output dimensions differ")
        self.model = model
        self.prior = prior
        self.dataset = dataset
        self.noise = noise
        self.offset = float(offset)
        self.n_full = 0
        self.n_reduced = 0

    @property
    def dim(self) -> int:
        return self.model.n_params

    def _inadmissible(self, x, kind, t0, lp=-np.inf):
        return PosteriorEvaluation(x, -np.inf, np.inf, None, kind, time.perf_counter_ns() - t0, lp)

    def log_full(self, x) -> PosteriorEvaluation:
        """Full-model evaluation (one PDE solve)."""
        t0 = time.perf_counter_ns()
        x = np.asarray(x, float)
        lp = log_prior(self.prior, x)
        if not np.isfinite(lp):
            return self._inadmissible(x, "full", t0)
        try:
            state = self.model.solve(x)
        except DomainError:
            return self._inadmissible(x, "full", t0)
        self.n_full += 1
        out = self.model.observation.matrix @ state.u
        phi = misfit(out, self.dataset, self.noise)
        return PosteriorEvaluation(x, lp - phi + self.offset, phi, out, "full",
                                   time.perf_counter_ns() - t0, lp, state)

    def log_reduced(self, rom, x) -> PosteriorEvaluation:
        """Reduced-model evaluation; ``state`` holds the :class:`ReducedSolution`."""
        t0 = time.perf_counter_ns()
        x = np.asarray(x, float)
        lp = log_prior(self.prior, x)
        if not np.isfinite(lp):
            return self._inadmissible(x, "reduced", t0)
        try:
            sol = rom.solve(x)
        except DomainError:
            return self._inadmissible(x, "reduced", t0)
        self.n_reduced += 1
        phi = misfit(sol.outputs, self.dataset, self.noise)
        return PosteriorEvaluation(x, lp - phi + self.offset, phi, sol.outputs, "reduced",
                                   time.perf_counter_ns() - t0, lp, sol)


def log_posterior_full(posterior: Posterior, x) -> PosteriorEvaluation:
    return posterior.log_full(x)


def log_posterior_reduced(posterior: Posterior, rom, x) -> PosteriorEvaluation:
    return posterior.log_reduced(rom, x)


# ---------------------------------------------------------------------------
# dataset file
# ---------------------------------------------------------------------------


def save_dataset(path, dataset: Dataset, noise: NoiseModel) -> None:
    """Write a dataset as text.

    The file starts with ``# key: value`` header lines (``seed``, ``snr``,
    ``truth`` as a JSON list, ``description``), followed by one row per
    sensor with columns ``sensor_x sensor_y d_obs sigma``.
    """
    p = Path(path)
    sensors = dataset.sensors if dataset.sensors is not None else np.full((dataset.n_outputs, 2), np.nan)
    lines = [
        "# romcmc dataset v1",
        f"# seed: {json.dumps(dataset.seed)}",
        f"# snr: {json.dumps(dataset.snr)}",
        f"# truth: {json.dumps(None if dataset.truth is None else [float(v) for v in dataset.truth])}",
        f"# description: {json.dumps(dataset.description)}",
        "# columns: sensor_x sensor_y d_obs sigma",
    ]
    for (sx, sy), d, s in zip(sensors, dataset.d_obs, noise.std):
        lines.append(f"{float(sx)!r} {float(sy)!r} {float(d)!r} {float(s)!r}")
    p.write_text("\n".join(lines) + "\n")


def load_dataset(path):
    header = {}
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            if ":" in line:
                key, val = line[1:].split(":", 1)
                header[key.strip()] = val.strip()
            continue
        if line.strip():
            rows.append([float(v) for v in line.split()])
    arr = np.array(rows, dtype=float).reshape(-1, 4)
    truth = json.loads(header.get("truth", "null"))
    sensors = None if np.all(np.isnan(arr[:, :2])) else arr[:, :2]
    ds = Dataset(arr[:, 2].copy(), sensors, None if truth is None else np.array(truth),
                 json.loads(header.get("seed", "null")), json.loads(header.get("snr", "null")),
                 json.loads(header.get("description", '""')))
    return ds, NoiseModel(arr[:, 3].copy())
