"""Shared long-running computations for the acceptance tests.

Every builder is memoised for the session.  Setting ``ROMCMC_ACCEPTANCE_CACHE``
to a directory additionally persists results there between sessions.
"""

from __future__ import annotations

import functools
import inspect
import logging
import os
import pickle
import time
from pathlib import Path

import numpy as np

from romcmc.diagnostics import efficiency_report, iact, toy_quadrature_oracle
from romcmc.problems import rbf9d, toy2d
from romcmc.rom import ReducedOrderModel, pod_from_prior
from romcmc.samplers import AdaptationConfig, ProposalConfig, Sampler, find_map, pilot_proposal

logger = logging.getLogger("acceptance")

DESK_MESH = 60
LARGE_MESH = 120
EPSILONS = (1e-1, 1e-2, 1e-3)
REF_STEPS = 60_000
REF_BURN = 1_000
FT_STEPS = 3_000
FT_EXTRA = 3_000
EA_STEPS = 100_000
EA_BURN = 2_000
# runs at the large mesh, where every full solve costs about ten times more
LARGE_REF_STEPS = 10_000
LARGE_FT_STEPS = 1_500
LARGE_EA_STEPS = 30_000


def _disk_cached(name):
    def deco(fn):
        sig = inspect.signature(fn)
        memo = {}

        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            bound = sig.bind(*args, **kwargs)
            bound.apply_defaults()
            key = tuple(bound.arguments.values())
            if key in memo:
                return memo[key]
            root = os.environ.get("ROMCMC_ACCEPTANCE_CACHE")
            path = None
            if root:
                path = Path(root) / ("_".join([name] + [str(a) for a in key]) + ".pkl")
                if path.exists():
                    with open(path, "rb") as fh:
                        memo[key] = pickle.load(fh)
                    return memo[key]
            t0 = time.perf_counter()
            out = fn(*key)
            logger.warning("%s%s computed in %.1f s", name, key, time.perf_counter() - t0)
            if path is not None:
                path.parent.mkdir(parents=True, exist_ok=True)
                with open(path, "wb") as fh:
                    pickle.dump(out, fh)
            memo[key] = out
            return out
        return wrapper
    return deco


@functools.lru_cache(maxsize=None)
def problem9d(mesh=DESK_MESH, snr=50.0):
    return rbf9d(mesh, snr)


@_disk_cached("pilot")
def pilot(mesh=DESK_MESH, snr=50.0):
    p = problem9d(mesh, snr)
    res = pilot_proposal(p.posterior, p.prior.median(), seed=11)
    return {"cov": res.proposal.covariance, "x_map": res.x_map, "x0": res.x_final}


def _summary(s: Sampler, burn: int) -> dict:
    rec = s.record
    out = {
        "samples": rec.samples.copy(),
        "full_evals": rec.full_evaluations(),
        "wall_time_s": rec.wall_time_s(),
        "basis": None if s.rom is None else s.basis.copy(),
        "stopped": None if s.rom is None else s.adapt_state.stopped,
        "adapt_steps": None if s.rom is None else s.adapt_state.steps,
        "meta": rec.meta.copy(),
        "burn": burn,
    }
    if rec.n - 1 > burn + 10:
        rep = efficiency_report(rec, burn)
        out.update(ess=rep.ess_min, ess_per_s=rep.ess_per_s)
    return out


def _sampler(p, pil, algorithm, eps=None, seed=0, **kw):
    adapt = None if eps is None else AdaptationConfig(epsilon=eps)
    return Sampler(p.posterior, ProposalConfig(pil["cov"]), algorithm, pil["x0"], adapt, seed=seed, **kw)


@_disk_cached("reference")
def reference(mesh=DESK_MESH, n_steps=REF_STEPS):
    p, pil = problem9d(mesh), pilot(mesh)
    s = _sampler(p, pil, "reference", seed=101, keep_outputs=True, capacity=n_steps + 1)
    s.run(n_steps)
    out = _summary(s, REF_BURN)
    out["outputs"] = s.record.outputs.copy()
    return out


@_disk_cached("full_target")
def full_target(eps, mesh=DESK_MESH, n_steps=FT_STEPS, extra=0):
    """Full-target chain; ``avg_beta`` covers the first ``n_steps``, samples cover all steps."""
    p, pil = problem9d(mesh), pilot(mesh)
    s = _sampler(p, pil, "full_target", eps, seed=202, capacity=n_steps + extra + 1)
    s.run(n_steps)
    beta = s.record.average_beta(0)
    if extra:
        s.run(extra)
    out = _summary(s, min(REF_BURN, n_steps // 3))
    out["avg_beta"] = beta
    return out


@_disk_cached("eps_approx")
def eps_approx(eps, mesh=DESK_MESH, n_steps=EA_STEPS, snr=50.0):
    p, pil = problem9d(mesh, snr), pilot(mesh, snr)
    s = _sampler(p, pil, "eps_approx", eps, seed=303, capacity=n_steps + 1)
    s.run(n_steps)
    return _summary(s, EA_BURN)


@_disk_cached("pod")
def pod(mesh, n_samples=10_000, criterion=1e-8):
    p = problem9d(mesh)
    basis, spectrum = pod_from_prior(p.model, p.prior, n_samples, criterion, np.random.default_rng(404))
    return {"basis": basis if mesh == DESK_MESH else None, "eigenvalues": spectrum.eigenvalues,
            "retained": spectrum.retained}


def mc_standard_errors(samples, mean):
    """Monte Carlo standard errors of the sample mean and covariance entries (IACT-corrected)."""
    x = np.asarray(samples, float)
    n, d = x.shape
    se_mean = np.array([x[:, i].std(ddof=1) * np.sqrt(2 * iact(x[:, i]) / n) for i in range(d)])
    c = x - x.mean(0)
    se_cov = np.zeros((d, d))
    for i in range(d):
        for j in range(i, d):
            y = c[:, i] * c[:, j]
            se_cov[i, j] = se_cov[j, i] = y.std(ddof=1) * np.sqrt(2 * iact(y) / n)
    return se_mean, se_cov


# ---------------------------------------------------------------------------
# toy Hellinger study
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=None)
def toy_problem():
    return toy2d()


def toy_basis(eps, n_steps=20_000):
    """Final basis of an epsilon-approximate run on the 2D toy."""
    p = toy_problem()
    s = Sampler(p.posterior, ProposalConfig(np.diag([0.02, 0.02]) ** 2), "eps_approx", p.truth,
                AdaptationConfig(epsilon=eps), seed=505)
    s.run(n_steps)
    return s.basis.copy()


def _toy_log_density_z(Z, density):
    """Unnormalised log density of ``z = log x`` (Jacobian included) at each row of ``Z``."""
    return np.array([density(np.exp(z)).log_density + z.sum() for z in np.atleast_2d(Z)])


def toy_hellinger(epsilons=EPSILONS, n_steps=20_000):
    """Hellinger distance between the full and reduced toy posteriors for each epsilon.

    The posteriors are compared in log coordinates on a box of +-12 Laplace
    standard deviations around the mode.  Returns ``{eps: (m, d_hell)}``.
    """
    p = toy_problem()
    full = p.posterior.log_full
    zm = np.log(find_map(p.posterior, p.truth))
    h = 1e-3
    H = np.zeros((2, 2))
    for i in range(2):
        for j in range(2):
            ei, ej = h * np.eye(2)[i], h * np.eye(2)[j]
            pts = np.array([zm + ei + ej, zm + ei - ej, zm - ei + ej, zm - ei - ej])
            f = _toy_log_density_z(pts, full)
            H[i, j] = (f[0] - f[1] - f[2] + f[3]) / (4 * h * h)
    sd = np.sqrt(np.diag(np.linalg.inv(-H)))
    bounds = np.column_stack([zm - 12 * sd, zm + 12 * sd])
    cache = {}

    def log_full(Z):
        # the grids are fixed, so the full-model values are shared across epsilons
        if len(Z) not in cache:
            cache[len(Z)] = _toy_log_density_z(Z, full)
        return cache[len(Z)]

    out = {}
    for eps in epsilons:
        basis = toy_basis(eps, n_steps)
        rom = ReducedOrderModel(p.model, basis, p.noise)
        res = toy_quadrature_oracle(log_full, lambda Z: _toy_log_density_z(Z, lambda x: p.posterior.log_reduced(rom, x)),
                                    bounds)
        out[eps] = (basis.m, res.hellinger)
    return out
