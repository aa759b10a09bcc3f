"""Sampling-efficiency and approximation diagnostics.

* integrated autocorrelation time and effective sample size,
* efficiency summaries and speedup factors,
* the posterior measure of the set where the reduced model misses the error threshold,
* posterior tightness,
* the variance/bias trade-off bound ``tau`` of approximate sampling,
* tensor-grid quadrature of normalising constants and Hellinger distances for 1D/2D toys.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NumericalError

logger = logging.getLogger(__name__)

SUMMARY_FIELDS = ("error_threshold", "avg_beta", "full_evals", "basis_dim", "cpu_time_s", "ess",
                  "ess_per_s", "speedup", "mu_complement")


class DegenerateSeriesWarning(UserWarning):
    """Raised for constant series whose autocorrelation is undefined."""


# ---------------------------------------------------------------------------
# IACT / ESS
# ---------------------------------------------------------------------------


def autocorrelation(x) -> np.ndarray:
    """Normalised autocorrelation of a 1D series at all lags (FFT based, biased estimator)."""
    x = np.asarray(x, float)
    n = x.size
    y = x - x.mean()
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(y, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n] / n
    if acov[0] <= 0.0:
        return np.zeros(n)
    return acov / acov[0]


def iact(series) -> float:
    """Integrated autocorrelation time ``1/2 + sum_{j>=1} rho_j``.

    The sum is truncated with Geyer's initial positive sequence: lags are
    paired, ``Gamma_k = rho_{2k} + rho_{2k+1}``, and summation stops before
    the first non-positive pair.  Then ``IACT = sum_k Gamma_k - 1/2``.
    """
    x = np.asarray(series, float).ravel()
    if x.size < 10:
        raise ValueError("IACT needs at least 10 values")
    if not np.all(np.isfinite(x)):
        raise ValueError("series contains non-finite values")
    if np.ptp(x) == 0.0:
        warnings.warn("constant series; IACT set to 1/2", DegenerateSeriesWarning, stacklevel=2)
        return 0.5
    rho = autocorrelation(x)
    n_pairs = rho.size // 2
    gam = rho[: 2 * n_pairs : 2] + rho[1 : 2 * n_pairs : 2]
    nonpos = np.flatnonzero(gam <= 0.0)
    k = nonpos[0] if nonpos.size else n_pairs
    return float(max(gam[:k].sum() - 0.5, 0.5) if k > 0 else 0.5)


def ess(chain, h: Optional[Callable] = None) -> np.ndarray:
    """Effective sample size ``N / (2 IACT)`` per component of ``h(chain)`` (identity by default)."""
    vals = np.asarray(chain if h is None else h(np.asarray(chain)), float)
    if vals.ndim == 1:
        vals = vals[:, None]
    n = vals.shape[0]
    return np.array([n / (2.0 * iact(vals[:, j])) for j in range(vals.shape[1])])


@dataclass
class EfficiencyReport:
    """Efficiency of one chain; ``ess`` and ``iact`` are per component."""

    ess: np.ndarray
    iact: np.ndarray
    n_samples: int
    wall_time_s: float
    full_evals: int
    reduced_evals: int
    label: str = ""

    @property
    def ess_min(self) -> float:
        return float(np.min(self.ess))

    @property
    def ess_per_s(self) -> float:
        return self.ess_min / self.wall_time_s if self.wall_time_s > 0 else float("inf")

    def speedup(self, baseline: "EfficiencyReport") -> float:
        """``(ESS / time) / (ESS_ref / time_ref)``."""
        return self.ess_per_s / baseline.ess_per_s


def efficiency_report(record, burn_in: int = 0, h: Optional[Callable] = None, label: str = "") -> EfficiencyReport:
    """ESS over post-burn-in samples; time and evaluation counts over the whole run."""
    s = record.post_burn_in(burn_in)
    x = record.samples[s]
    vals = x if h is None else h(x)
    vals = np.asarray(vals, float)
    if vals.ndim == 1:
        vals = vals[:, None]
    ia = np.array([iact(vals[:, j]) for j in range(vals.shape[1])])
    n = vals.shape[0]
    return EfficiencyReport(n / (2.0 * ia), ia, n, record.wall_time_s(), record.full_evaluations(),
                            record.reduced_evaluations(), label or record.algorithm)


def summary_record(report: EfficiencyReport, baseline: Optional[EfficiencyReport] = None,
                   error_threshold=None, avg_beta=None, basis_dim=None, mu_complement=None) -> dict:
    """One table row with exactly the fields of :data:`SUMMARY_FIELDS`."""
    def num(v):
        if v is None:
            return None
        v = float(v)
        return None if np.isnan(v) else v

    return {
        "error_threshold": num(error_threshold),
        "avg_beta": num(avg_beta),
        "full_evals": int(report.full_evals),
        "basis_dim": None if basis_dim is None else int(basis_dim),
        "cpu_time_s": float(report.wall_time_s),
        "ess": float(report.ess_min),
        "ess_per_s": float(report.ess_per_s),
        "speedup": None if baseline is None else float(report.speedup(baseline)),
        "mu_complement": num(mu_complement),
    }


# ---------------------------------------------------------------------------
# feasible set
# ---------------------------------------------------------------------------


@dataclass
class FeasibilityReport:
    """Monte Carlo estimate of the posterior mass where ``||t_m||_inf > epsilon``.

    ``pairs`` holds ``(indicated, true)`` infinity norms per distinct sample
    (indicated is NaN when no dual space is available).  A zero estimate only
    means no sample fell outside the feasible set (``monte_carlo_zero``).
    """

    epsilon: float
    mu_complement: float
    n_samples: int
    pairs: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @property
    def monte_carlo_zero(self) -> bool:
        return self.mu_complement == 0.0

    def describe(self) -> str:
        if self.monte_carlo_zero:
            return f"0 (Monte Carlo zero over {self.n_samples} samples, not an exact zero)"
        return f"{self.mu_complement:.3g} over {self.n_samples} samples"


def feasible_set_measure(samples, rom, epsilon: float, full_outputs=None,
                         with_indicator: bool = True) -> FeasibilityReport:
    """Fraction of (full posterior) samples at which the true scaled error exceeds ``epsilon``.

    Repeated states are evaluated once and weighted by multiplicity.  When
    ``full_outputs`` (one row per sample) are given no full solves are needed.
    """
    samples = np.asarray(samples, float)
    if samples.shape[0] == 0:
        raise ValueError("feasible-set estimate needs at least one sample")
    uniq, first, counts = np.unique(samples, axis=0, return_index=True, return_counts=True)
    pairs = np.empty((len(uniq), 2))
    for i, (x, j) in enumerate(zip(uniq, first)):
        sol = rom.solve(x)
        out = None if full_outputs is None else full_outputs[j]
        if out is not None and np.any(np.isnan(out)):
            out = None
        pairs[i, 1] = rom.true_error(x, out, sol).inf_norm
        if with_indicator and rom.basis.dual is not None:
            pairs[i, 0] = rom.indicator(sol).inf_norm
        else:
            pairs[i, 0] = np.nan
    outside = pairs[:, 1] > epsilon
    mu = float(counts[outside].sum() / counts.sum())
    return FeasibilityReport(float(epsilon), mu, int(counts.sum()), pairs, counts)


def posterior_average_error(samples, rom, full_outputs=None) -> float:
    """Posterior mean of ``||t_m||_inf`` over the given samples."""
    rep = feasible_set_measure(samples, rom, np.inf, full_outputs, with_indicator=False)
    return float(np.sum(rep.pairs[:, 1] * rep.weights) / rep.weights.sum())


# ---------------------------------------------------------------------------
# tightness and the variance/bias trade-off
# ---------------------------------------------------------------------------


def tightness(samples, prior) -> float:
    """``prod_i sigma0_i / sigma_i`` from prior marginal and posterior sample standard deviations."""
    samples = np.asarray(samples, float)
    if samples.ndim != 2 or samples.shape[0] < 2:
        raise ValueError("tightness needs at least two samples")
    sd = samples.std(axis=0, ddof=1)
    if np.any(sd == 0.0):
        raise ValueError("a posterior marginal has zero sample variance")
    sd0 = np.asarray(prior.marginal_std(), float)
    return float(np.exp(np.sum(np.log(sd0) - np.log(sd))))


@dataclass
class TradeoffResult:
    tau: float
    verdict: str
    var_ratio: float

    def preferable(self, target_ess: float) -> bool:
        """Whether approximate sampling has the smaller MSE at this target ESS."""
        return self.tau >= 0 and target_ess <= self.tau


def mse_tradeoff(var_full: float, var_approx: float, bias: float, speedup: float,
                 target_ess: Optional[float] = None) -> TradeoffResult:
    """Largest target ESS for which sampling the approximate posterior wins.

    ``tau = Var/Bias^2 * (1 - Var_m / (Var * S))``; approximate sampling has
    the smaller MSE at equal cost iff the target ESS is at most ``tau``.
    A zero bias gives ``tau = inf``.
    """
    if var_full <= 0 or var_approx < 0 or speedup <= 0:
        raise ValueError("variances must be positive and the speedup positive")
    factor = 1.0 - var_approx / (var_full * speedup)
    if bias == 0.0:
        tau = np.inf if factor > 0 else (-np.inf if factor < 0 else 0.0)
    else:
        tau = var_full / bias**2 * factor
    if tau < 0 or (factor <= 0):
        verdict = "never preferable"
    elif target_ess is None:
        verdict = f"preferable for target ESS <= {tau:.4g}"
    else:
        verdict = "preferable" if target_ess <= tau else "not preferable"
    return TradeoffResult(float(tau), verdict, float(var_approx / var_full))


def mse_tradeoff_from_reports(report_full: EfficiencyReport, report_approx: EfficiencyReport,
                              samples_full, samples_approx, reference_mean, component: int = 0,
                              target_ess: Optional[float] = None) -> TradeoffResult:
    """:func:`mse_tradeoff` for one component with the bias measured against a reference mean."""
    a = np.asarray(samples_full, float)[:, component]
    b = np.asarray(samples_approx, float)[:, component]
    bias = float(b.mean() - np.asarray(reference_mean)[component])
    return mse_tradeoff(a.var(), b.var(), bias, report_approx.speedup(report_full), target_ess)


# ---------------------------------------------------------------------------
# quadrature oracle
# ---------------------------------------------------------------------------


def hellinger_gaussian_1d(mu1, s1, mu2, s2) -> float:
    """Closed-form Hellinger distance between two 1D normal densities."""
    bc = np.sqrt(2 * s1 * s2 / (s1**2 + s2**2)) * np.exp(-0.25 * (mu1 - mu2) ** 2 / (s1**2 + s2**2))
    return float(np.sqrt(max(0.0, 1.0 - bc)))


@dataclass
class ToyOracleResult:
    Z: float
    Z_m: float
    hellinger: float
    mean: np.ndarray
    mean_m: np.ndarray
    cov: np.ndarray
    cov_m: np.ndarray
    n_points: int
    bounds: np.ndarray
    log_shift: float = 0.0


def _grid(bounds, n):
    pts, wts = np.polynomial.legendre.leggauss(n)
    axes, weights = [], []
    for lo, hi in bounds:
        axes.append(0.5 * (hi - lo) * pts + 0.5 * (hi + lo))
        weights.append(0.5 * (hi - lo) * wts)
    mesh = np.meshgrid(*axes, indexing="ij")
    W = weights[0]
    for w in weights[1:]:
        W = np.multiply.outer(W, w)
    return np.column_stack([m.ravel() for m in mesh]), W.ravel()


def _quadrature(log_p, log_q, bounds, n, shift):
    X, w = _grid(bounds, n)
    lp = np.asarray(log_p(X), float)
    lq = np.asarray(log_q(X), float)
    p = np.exp(lp - shift)
    q = np.exp(lq - shift)
    Z, Zm = w @ p, w @ q
    if not (Z > 0 and Zm > 0):
        raise NumericalError("quadrature normalising constant is not positive")
    d2 = 0.5 * w @ (np.sqrt(p / Z) - np.sqrt(q / Zm)) ** 2
    mean = (w * p) @ X / Z
    mean_m = (w * q) @ X / Zm
    Xc, Xm = X - mean, X - mean_m
    cov = (Xc * (w * p)[:, None]).T @ Xc / Z
    cov_m = (Xm * (w * q)[:, None]).T @ Xm / Zm
    return Z, Zm, float(np.sqrt(max(d2, 0.0))), mean, mean_m, cov, cov_m, float(lp.max())


def toy_quadrature_oracle(log_target: Callable, log_approx: Callable, bounds: Sequence, n: int = 200,
                          refine: int = 250, tol: float = 1e-6, shift: Optional[float] = None) -> ToyOracleResult:
    """Normalising constants, Hellinger distance and moments by Gauss-Legendre tensor quadrature.

    ``log_target`` and ``log_approx`` map an ``(K, d)`` array of points to
    unnormalised log densities (``d <= 2``).  The computation is repeated
    with ``refine`` points per axis; a relative change of ``Z`` or ``Z_m``
    above ``tol``, or an absolute change of the Hellinger distance above
    ``tol``, raises NumericalError.  ``Z`` values are reported relative to
    ``exp(log_shift)``.
    """
    bounds = np.atleast_2d(np.asarray(bounds, float))
    if bounds.shape[0] > 2:
        raise ValueError("tensor quadrature is limited to two dimensions")
    if n < 200:
        raise ValueError("use at least 200 points per axis")
    if shift is None:
        X, _ = _grid(bounds, 41)
        shift = float(np.max(log_target(X)))
    a = _quadrature(log_target, log_approx, bounds, n, shift)
    b = _quadrature(log_target, log_approx, bounds, refine, shift)
    dz = abs(a[0] - b[0]) / b[0]
    dzm = abs(a[1] - b[1]) / b[1]
    dh = abs(a[2] - b[2])
    if dz > tol or dzm > tol or dh > tol:
        raise NumericalError(f"quadrature not converged under refinement (dZ={dz:.2e}, dZm={dzm:.2e}, dH={dh:.2e})")
    Z, Zm, dH, mean, mean_m, cov, cov_m, _ = b
    return ToyOracleResult(Z, Zm, dH, mean, mean_m, cov, cov_m, refine, bounds, shift)


# ---------------------------------------------------------------------------
# binned marginals
# ---------------------------------------------------------------------------


def common_bin_edges(chains: Sequence[np.ndarray], bins: int = 50, quantile: float = 0.0) -> list:
    """Per-component bin edges spanning all chains (optionally trimmed to inner quantiles)."""
    pooled = np.concatenate([np.asarray(c, float) for c in chains])
    lo = np.quantile(pooled, quantile, axis=0)
    hi = np.quantile(pooled, 1.0 - quantile, axis=0)
    return [np.linspace(l, h, bins + 1) for l, h in zip(lo, hi)]


def marginal_tv(a, b, edges) -> np.ndarray:
    """Total-variation distance between binned marginals per component (out-of-range mass clipped in)."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    out = []
    for j, e in enumerate(edges):
        ha = np.histogram(np.clip(a[:, j], e[0], e[-1]), e)[0] / len(a)
        hb = np.histogram(np.clip(b[:, j], e[0], e[-1]), e)[0] / len(b)
        out.append(0.5 * np.abs(ha - hb).sum())
    return np.array(out)
