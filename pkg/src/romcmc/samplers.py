"""Random-walk Metropolis, adaptive delayed acceptance and the epsilon-approximate sampler.

Randomness: a chain seed is split with ``SeedSequence(seed).spawn(2)``.  The
first stream draws every proposal increment followed by one uniform for the
first (or only) accept/reject decision of that proposal; the second stream
draws the uniforms of second-stage (full-model correction) decisions.  With an
exact reduced model and ``L = 1`` the delayed-acceptance chain therefore
consumes its first stream exactly like the single-stage reference chain.

A proposal is accepted iff ``log(u) < log_ratio`` with ``u`` uniform on
``[0, 1)``; a NaN log ratio (both densities zero) rejects.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import scipy.optimize as sopt

from .errors import BasisCapacityError, ChainAborted, NumericalError, StateError, SwitchToFullTarget
from .rom import ReducedBasis, ReducedOrderModel, load_basis, save_basis

logger = logging.getLogger(__name__)

ALGORITHMS = ("reference", "full_target", "eps_approx", "reduced_mh")

EVAL_NONE = 0
EVAL_REDUCED = 1
EVAL_DELAYED = 2  # reduced screening followed by a full-model correction
EVAL_FULL = 3

META_DTYPE = np.dtype([
    ("step", "<u8"),
    ("stage1_accept", "i1"),
    ("stage2_prob", "<f8"),
    ("stage2_accept", "i1"),
    ("indicator_inf_norm", "<f8"),
    ("eval_kind", "u1"),
    ("enriched", "u1"),
    ("wall_time_ns", "<u8"),
    ("n_full", "<u4"),
    ("n_reduced", "<u4"),
    ("basis_dim", "<u4"),
])
_META_FIELDS = META_DTYPE.names
_META_DEFAULTS = {"step": 0, "stage1_accept": -1, "stage2_prob": np.nan, "stage2_accept": -1,
                  "indicator_inf_norm": np.nan, "eval_kind": EVAL_NONE, "enriched": 0, "wall_time_ns": 0,
                  "n_full": 0, "n_reduced": 0, "basis_dim": 0}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class ProposalConfig:
    """Gaussian random-walk proposal ``x' = x + scale * L z`` with ``L L^T = covariance``.

    ``scale`` defaults to ``2.38 / sqrt(N_p)``.
    """

    covariance: np.ndarray
    scale: Optional[float] = None
    note: str = ""

    def __post_init__(self):
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if cov.shape[0] != cov.shape[1] or not np.allclose(cov, cov.T, rtol=1e-12, atol=0.0):
            raise ValueError("proposal covariance must be square and symmetric")
        try:
            self.chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("proposal covariance is not positive definite") from exc
        self.covariance = cov
        if self.scale is None:
            self.scale = 2.38 / np.sqrt(cov.shape[0])
        if not self.scale >= 0.0:
            raise ValueError("proposal scale must be nonnegative")

    @property
    def dim(self) -> int:
        return self.covariance.shape[0]


def propose(config: ProposalConfig, x, rng: np.random.Generator) -> np.ndarray:
    """Symmetric Gaussian random-walk proposal."""
    z = rng.standard_normal(config.dim)
    return np.asarray(x, float) + config.scale * (config.chol @ z)


@dataclass
class AdaptationConfig:
    """Reduced-basis adaptation controls.

    ``epsilon`` is the error threshold, ``epsilon0`` the upper threshold of
    the approximate sampler, ``subchain_length`` the first-stage subchain
    length ``L``, ``max_dim`` the basis cap ``M`` and ``c`` the constant of
    the finite adaptation criterion ``N_max = 1 / (c * epsilon)``.
    """

    epsilon: float = 0.1
    epsilon0: float = 1.0
    subchain_length: int = 50
    max_dim: int = 200
    c: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.epsilon < self.epsilon0:
            raise ValueError("need 0 < epsilon < epsilon0")
        if int(self.subchain_length) != self.subchain_length or self.subchain_length < 1:
            raise ValueError("subchain_length must be a positive integer")
        if int(self.max_dim) != self.max_dim or self.max_dim < 1:
            raise ValueError("max_dim must be a positive integer")
        if not self.c > 0.0:
            raise ValueError("c must be positive")
        self.subchain_length = int(self.subchain_length)
        self.max_dim = int(self.max_dim)

    @property
    def n_max(self) -> float:
        return 1.0 / (self.c * self.epsilon)


@dataclass
class AdaptationState:
    """Counters of the finite adaptation criterion.

    ``steps`` counts chain steps taken while adaptation was active and
    ``history`` the number of such steps between consecutive enrichments.
    """

    enrichments: int = 0
    steps: int = 0
    stopped: bool = False
    stop_reason: str = ""
    history: list = field(default_factory=list)
    since_last: int = 0

    def record_step(self):
        self.steps += 1
        self.since_last += 1

    def record_enrichment(self):
        self.enrichments += 1
        self.history.append(self.since_last)
        self.since_last = 0


def finite_adaptation_check(state: AdaptationState, config: AdaptationConfig) -> bool:
    """True iff the average number of steps per enrichment exceeds ``1 / (c * epsilon)``.

    Ties within rounding (``1 / (0.1 * 0.1)`` is not exactly 100) do not stop adaptation.
    """
    if state.enrichments == 0:
        return False
    return state.steps / state.enrichments > config.n_max * (1.0 + 1e-12)


# ---------------------------------------------------------------------------
# chain record
# ---------------------------------------------------------------------------


class ChainRecord:
    """Samples and per-step metadata; row 0 holds the initial state."""

    def __init__(self, dim: int, algorithm: str, seed: int, capacity: int = 1024):
        self.dim = dim
        self.algorithm = algorithm
        self.seed = seed
        self._x = np.empty((max(capacity, 1), dim))
        self._meta = np.zeros(max(capacity, 1), dtype=META_DTYPE)
        self._outputs = None
        self.n = 0
        self.info: dict = {}

    def _ensure(self, k):
        if k <= self._x.shape[0]:
            return
        cap = max(k, 2 * self._x.shape[0])
        x = np.empty((cap, self.dim))
        x[: self.n] = self._x[: self.n]
        meta = np.zeros(cap, dtype=META_DTYPE)
        meta[: self.n] = self._meta[: self.n]
        self._x, self._meta = x, meta
        if self._outputs is not None:
            o = np.full((cap, self._outputs.shape[1]), np.nan)
            o[: self.n] = self._outputs[: self.n]
            self._outputs = o

    def append(self, x, meta: dict, outputs=None):
        self._ensure(self.n + 1)
        self._x[self.n] = x
        self._meta[self.n] = tuple(self.n if k == "step" else meta.get(k, _META_DEFAULTS[k]) for k in _META_FIELDS)
        if outputs is not None:
            if self._outputs is None:
                self._outputs = np.full((self._x.shape[0], len(outputs)), np.nan)
            self._outputs[self.n] = outputs
        self.n += 1

    def __len__(self):
        return self.n

    @property
    def samples(self) -> np.ndarray:
        return self._x[: self.n]

    @property
    def meta(self) -> np.ndarray:
        return self._meta[: self.n]

    @property
    def outputs(self) -> Optional[np.ndarray]:
        """Full-model outputs at each state (reference chains only), NaN where unknown."""
        return None if self._outputs is None else self._outputs[: self.n]

    def post_burn_in(self, burn_in: int) -> slice:
        return slice(min(burn_in + 1, self.n), self.n)

    def full_evaluations(self) -> int:
        return int(self.meta["n_full"].sum())

    def reduced_evaluations(self) -> int:
        return int(self.meta["n_reduced"].sum())

    def wall_time_s(self, start: int = 0) -> float:
        return float(self.meta["wall_time_ns"][start:].sum()) * 1e-9

    def average_beta(self, burn_in: int = 0) -> float:
        s = self.post_burn_in(burn_in)
        p = self.meta["stage2_prob"][s]
        p = p[np.isfinite(p)]
        return float(p.mean()) if p.size else float("nan")

    def basis_dim(self) -> int:
        return int(self.meta["basis_dim"][-1]) if self.n else 0

    def truncate(self, n: int):
        self.n = min(self.n, n)


# ---------------------------------------------------------------------------
# sampler
# ---------------------------------------------------------------------------


def _accept(log_u: float, log_ratio: float) -> bool:
    return bool(log_u < log_ratio)  # NaN compares false


class Sampler:
    """One MCMC chain owning its reduced basis and random streams.

    Parameters
    ----------
    posterior : Posterior
    proposal : ProposalConfig
    algorithm : str
        ``'reference'`` (full-model Metropolis), ``'full_target'`` (adaptive
        delayed acceptance), ``'eps_approx'`` or ``'reduced_mh'`` (plain
        Metropolis on the reduced posterior with a fixed basis).
    x0 : array_like
        Initial state; must have positive posterior density.
    adaptation : AdaptationConfig, optional
        Required by the reduced-model algorithms.
    basis : ReducedBasis, optional
        Starting basis.  When omitted a basis holding the full solution at
        ``x0`` is created.  When given, it is used (and mutated) in place.
    seed : int
    keep_outputs : bool
        Store full-model outputs per state (used to measure true reduced
        errors on reference samples without extra solves).
    """

    def __init__(self, posterior, proposal: ProposalConfig, algorithm: str, x0, adaptation=None,
                 basis: Optional[ReducedBasis] = None, seed: int = 0, keep_outputs: bool = False,
                 use_affine: bool = True, capacity: int = 1024):
        if algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")
        if algorithm != "reference" and adaptation is None:
            adaptation = AdaptationConfig()
        self.posterior = posterior
        self.proposal = proposal
        self.algorithm = algorithm
        self.adaptation = adaptation
        self.adapt_state = AdaptationState()
        self.seed = int(seed)
        self.keep_outputs = keep_outputs
        ss = np.random.SeedSequence(self.seed)
        s1, s2 = ss.spawn(2)
        self.rng1 = np.random.Generator(np.random.PCG64(s1))
        self.rng2 = np.random.Generator(np.random.PCG64(s2))
        self.x = np.asarray(x0, float).copy()
        if proposal.dim != self.x.size:
            raise ValueError("proposal and state dimensions differ")
        self.record = ChainRecord(self.x.size, algorithm, self.seed, capacity)
        self.cur_full = None
        self.cur_red = None
        self.rom = None

        t0 = time.perf_counter_ns()
        n_full = 0
        self.cur_full = posterior.log_full(self.x)
        n_full += 1
        if not self.cur_full.admissible:
            raise StateError("initial state has zero posterior density")
        if algorithm != "reference":
            if basis is None:
                basis = ReducedBasis(posterior.model.n_state, adaptation.max_dim)
            self.rom = ReducedOrderModel(posterior.model, basis, posterior.noise, use_affine=use_affine)
            if basis.m == 0:
                self.rom.enrich(self.x, self.cur_full.state, {"step": 0, "source": "initial"})
            elif basis.dual is None and algorithm in ("full_target", "eps_approx"):
                self.rom.set_dual(self.cur_full.state, self.x)
            if algorithm == "reduced_mh":
                self.adapt_state.stopped = True
                self.adapt_state.stop_reason = "fixed basis"
            elif basis.m >= adaptation.max_dim:
                self.adapt_state.stopped = True
                self.adapt_state.stop_reason = "supplied basis already at cap"
        self.record.append(self.x, {
            "stage1_accept": -1, "stage2_prob": np.nan, "stage2_accept": -1,
            "indicator_inf_norm": np.nan, "eval_kind": EVAL_NONE, "enriched": 0,
            "wall_time_ns": time.perf_counter_ns() - t0, "n_full": n_full, "n_reduced": 0,
            "basis_dim": self.basis.m if self.rom else 0,
        }, self._outputs_of(self.cur_full))

    # -- helpers ------------------------------------------------------------

    @property
    def basis(self) -> Optional[ReducedBasis]:
        return None if self.rom is None else self.rom.basis

    @property
    def adapting(self) -> bool:
        return (self.rom is not None and not self.adapt_state.stopped
                and self.basis.m < self.adaptation.max_dim)

    def _outputs_of(self, ev):
        if not self.keep_outputs:
            return None
        if ev is None or ev.outputs is None:
            return np.full(self.posterior.model.n_outputs, np.nan)
        return ev.outputs

    def _reduced(self, x, counter):
        ev = self.posterior.log_reduced(self.rom, x)
        counter[1] += 1
        return ev

    def _current_reduced(self, counter):
        gen = self.basis.generation
        if self.cur_red is None or self.cur_red.state is None or self.cur_red.state.generation != gen \
                or not np.array_equal(self.cur_red.x, self.x):
            self.cur_red = self._reduced(self.x, counter)
        return self.cur_red

    def _current_full(self, counter):
        if self.cur_full is None:
            self.cur_full = self.posterior.log_full(self.x)
            counter[0] += 1
        return self.cur_full

    def _indicator(self, ev) -> float:
        if ev.state is None:
            return np.inf
        cache = getattr(ev, "_ind", None)
        if cache is None:
            cache = self.rom.indicator(ev.state).inf_norm
            ev._ind = cache
        return cache

    def _enrich(self, x, full_ev, step) -> bool:
        try:
            added = self.rom.enrich(x, full_ev.state, {"step": step})
        except BasisCapacityError:
            return False
        if added:
            self.adapt_state.record_enrichment()
        return added

    def _after_step(self, was_adapting: bool):
        st, cfg = self.adapt_state, self.adaptation
        if was_adapting:
            st.record_step()
            if finite_adaptation_check(st, cfg):
                st.stopped = True
                st.stop_reason = "finite adaptation criterion"
                logger.info("%s: adaptation stopped at step %d with m = %d (%d enrichments)",
                            self.algorithm, self.record.n, self.basis.m, st.enrichments)
        if self.rom is not None and not st.stopped and self.basis.m >= cfg.max_dim:
            if self.algorithm == "eps_approx":
                raise SwitchToFullTarget(
                    f"basis reached M = {cfg.max_dim} before adaptation finished; "
                    "rerun with the full target sampler", step=self.record.n)
            st.stopped = True
            st.stop_reason = "basis cap reached"
            logger.info("%s: basis cap M = %d reached at step %d", self.algorithm, cfg.max_dim, self.record.n)

    # -- kernels -------------------------------------------------------------

    def reference_step(self) -> dict:
        counter = [0, 0]
        xp = propose(self.proposal, self.x, self.rng1)
        log_u = np.log(self.rng1.random())
        ev = self.posterior.log_full(xp)
        counter[0] += 1
        cur = self._current_full(counter)
        log_a = ev.log_density - cur.log_density
        acc = _accept(log_u, log_a)
        if acc:
            self.x, self.cur_full = xp, ev
        return {"stage1_accept": -1, "stage2_prob": float(np.exp(min(0.0, log_a))) if np.isfinite(log_a) else 0.0,
                "stage2_accept": int(acc), "indicator_inf_norm": np.nan, "eval_kind": EVAL_FULL,
                "enriched": 0, "n_full": counter[0], "n_reduced": counter[1]}

    def metropolis_reduced_step(self) -> dict:
        """One Metropolis step on the reduced posterior (no correction, no adaptation)."""
        counter = [0, 0]
        cur = self._current_reduced(counter)
        xp = propose(self.proposal, self.x, self.rng1)
        log_u = np.log(self.rng1.random())
        ev = self._reduced(xp, counter)
        log_t = ev.log_density - cur.log_density
        acc = _accept(log_u, log_t)
        if acc:
            self.x, self.cur_red, self.cur_full = xp, ev, None
        return {"stage1_accept": int(acc), "stage2_prob": np.nan, "stage2_accept": -1,
                "indicator_inf_norm": np.nan, "eval_kind": EVAL_REDUCED, "enriched": 0,
                "n_full": counter[0], "n_reduced": counter[1]}

    def full_target_step(self) -> dict:
        cfg = self.adaptation
        counter = [0, 0]
        adapting = self.adapting
        x_n = self.x
        cur_red = self._current_reduced(counter)
        y, y_red = x_n, cur_red
        moved = False
        ind = np.nan
        for _ in range(cfg.subchain_length):
            yp = propose(self.proposal, y, self.rng1)
            log_u = np.log(self.rng1.random())
            ev = self._reduced(yp, counter)
            if _accept(log_u, ev.log_density - y_red.log_density):
                y, y_red, moved = yp, ev, True
            if adapting:
                ind = self._indicator(y_red)
                if ind >= cfg.epsilon:
                    break

        enriched = 0
        if not moved:
            beta, acc2 = 1.0, -1
        else:
            full_p = self.posterior.log_full(y)
            counter[0] += 1
            cur_full = self._current_full(counter)
            log_b = (full_p.log_density - cur_full.log_density) - (y_red.log_density - cur_red.log_density)
            beta = float(np.exp(min(0.0, log_b))) if np.isfinite(log_b) else 0.0
            acc = _accept(np.log(self.rng2.random()), log_b)
            acc2 = int(acc)
            if acc:
                self.x, self.cur_full, self.cur_red = y, full_p, y_red
            if adapting and full_p.admissible:
                t = self.rom.true_error(y, full_p.outputs, y_red.state).inf_norm
                if t >= cfg.epsilon:
                    enriched = int(self._enrich(y, full_p, self.record.n))
        self._after_step(adapting)
        return {"stage1_accept": int(moved), "stage2_prob": beta, "stage2_accept": acc2,
                "indicator_inf_norm": ind, "eval_kind": EVAL_DELAYED if moved else EVAL_REDUCED,
                "enriched": enriched, "n_full": counter[0], "n_reduced": counter[1]}

    def eps_approx_step(self) -> dict:
        cfg = self.adaptation
        counter = [0, 0]
        adapting = self.adapting
        cur_red = self._current_reduced(counter)
        xp = propose(self.proposal, self.x, self.rng1)
        log_u = np.log(self.rng1.random())
        ev = self._reduced(xp, counter)
        ind = self._indicator(ev) if (adapting and ev.admissible) else np.nan
        enriched = 0
        acc2 = -1

        if adapting and ev.admissible and ind >= cfg.epsilon:
            if ind >= cfg.epsilon0:
                full_p = self.posterior.log_full(xp)
                counter[0] += 1
                cur_full = self._current_full(counter)
                log_a = full_p.log_density - cur_full.log_density
                prob = float(np.exp(min(0.0, log_a))) if np.isfinite(log_a) else 0.0
                acc = _accept(log_u, log_a)
                acc1, acc2, kind = int(acc), int(acc), EVAL_FULL
                if acc:
                    self.x, self.cur_full, self.cur_red = xp, full_p, None
                    enriched = int(self._enrich(xp, full_p, self.record.n))
            else:
                log_b1 = ev.log_density - cur_red.log_density
                acc1, kind, prob = int(_accept(log_u, log_b1)), EVAL_REDUCED, np.nan
                if acc1:
                    kind = EVAL_DELAYED
                    full_p = self.posterior.log_full(xp)
                    counter[0] += 1
                    cur_full = self._current_full(counter)
                    log_b2 = (full_p.log_density - cur_full.log_density) - log_b1
                    prob = float(np.exp(min(0.0, log_b2))) if np.isfinite(log_b2) else 0.0
                    acc = _accept(np.log(self.rng2.random()), log_b2)
                    acc2 = int(acc)
                    if acc:
                        self.x, self.cur_full, self.cur_red = xp, full_p, None
                    if full_p.admissible:
                        enriched = int(self._enrich(xp, full_p, self.record.n))
        else:
            log_t = ev.log_density - cur_red.log_density
            prob = float(np.exp(min(0.0, log_t))) if np.isfinite(log_t) else 0.0
            acc = _accept(log_u, log_t)
            acc1, kind = int(acc), EVAL_REDUCED
            if acc:
                self.x, self.cur_red, self.cur_full = xp, ev, None
        self._after_step(adapting)
        return {"stage1_accept": acc1, "stage2_prob": prob, "stage2_accept": acc2,
                "indicator_inf_norm": ind, "eval_kind": kind, "enriched": enriched,
                "n_full": counter[0], "n_reduced": counter[1]}

    _KERNELS = {
        "reference": reference_step,
        "full_target": full_target_step,
        "eps_approx": eps_approx_step,
        "reduced_mh": metropolis_reduced_step,
    }

    def step(self) -> dict:
        t0 = time.perf_counter_ns()
        meta = self._KERNELS[self.algorithm](self)
        meta["wall_time_ns"] = time.perf_counter_ns() - t0
        meta["basis_dim"] = self.basis.m if self.rom is not None else 0
        outputs = self._outputs_of(self.cur_full) if self.keep_outputs else None
        self.record.append(self.x, meta, outputs)
        return meta

    def run(self, n_steps: int, checkpoint: Optional[str] = None, checkpoint_every: int = 0,
            progress_every: int = 0) -> ChainRecord:
        """Advance the chain by ``n_steps``.

        On a numerical failure a checkpoint is written (when ``checkpoint`` is
        given) and :class:`ChainAborted` is raised.
        """
        for k in range(int(n_steps)):
            try:
                self.step()
            except (NumericalError, StateError) as exc:
                path = None
                if checkpoint is not None:
                    path = save_checkpoint(self, checkpoint)
                raise ChainAborted(f"step {self.record.n} failed: {exc}", self.record.n, path) from exc
            except SwitchToFullTarget as exc:
                if checkpoint is not None:
                    exc.checkpoint = save_checkpoint(self, checkpoint)
                raise
            if checkpoint is not None and checkpoint_every and (k + 1) % checkpoint_every == 0:
                save_checkpoint(self, checkpoint)
            if progress_every and (k + 1) % progress_every == 0:
                logger.info("%s: step %d / %d, m = %s", self.algorithm, k + 1, n_steps,
                            self.basis.m if self.rom is not None else "-")
        return self.record


# module-level aliases for the individual kernels
def metropolis_reduced_step(sampler: Sampler) -> dict:
    return sampler.metropolis_reduced_step()


def reference_step(sampler: Sampler) -> dict:
    return sampler.reference_step()


def full_target_step(sampler: Sampler) -> dict:
    return sampler.full_target_step()


def eps_approx_step(sampler: Sampler) -> dict:
    return sampler.eps_approx_step()


def run_chain(algorithm: str, posterior, x0, n_steps: int, proposal: ProposalConfig,
              adaptation: Optional[AdaptationConfig] = None, seed: int = 0,
              basis: Optional[ReducedBasis] = None, **kwargs) -> ChainRecord:
    """Run ``n_steps`` of ``algorithm`` from ``x0`` and return the record (row 0 is ``x0``)."""
    run_kw = {k: kwargs.pop(k) for k in ("checkpoint", "checkpoint_every", "progress_every") if k in kwargs}
    s = Sampler(posterior, proposal, algorithm, x0, adaptation, basis, seed, **kwargs)
    s.run(n_steps, **run_kw)
    s.record.info.update(_sampler_info(s))
    return s.record


def _sampler_info(s: Sampler) -> dict:
    info = {"algorithm": s.algorithm, "seed": s.seed}
    if s.rom is not None:
        st = s.adapt_state
        info.update({"basis_dim": s.basis.m, "enrichments": st.enrichments, "adaptation_steps": st.steps,
                     "adaptation_stopped": st.stopped, "stop_reason": st.stop_reason})
    return info


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------


def save_checkpoint(sampler: Sampler, path) -> str:
    """Write the chain so far plus everything needed to continue it.

    ``path`` is a stem: ``<path>.npz`` holds samples, metadata and the
    sampler state (JSON), ``<path>.basis`` the reduced basis.
    """
    path = str(path)
    rec = sampler.record
    state = {
        "algorithm": sampler.algorithm,
        "seed": sampler.seed,
        "rng1": sampler.rng1.bit_generator.state,
        "rng2": sampler.rng2.bit_generator.state,
        "adapt_state": asdict(sampler.adapt_state),
        "adaptation": None if sampler.adaptation is None else asdict(sampler.adaptation),
        "proposal_scale": sampler.proposal.scale,
        "proposal_note": sampler.proposal.note,
        "info": rec.info,
    }
    arrays = {"samples": rec.samples, "meta": rec.meta, "x": sampler.x,
              "proposal_cov": sampler.proposal.covariance, "state": np.array(json.dumps(state, default=_json_default))}
    if rec.outputs is not None:
        arrays["outputs"] = rec.outputs
    tmp = path + ".tmp.npz"
    np.savez(tmp, **arrays)
    Path(tmp).replace(path + ".npz")
    if sampler.rom is not None:
        save_basis(path + ".basis.tmp", sampler.basis)
        Path(path + ".basis.tmp").replace(path + ".basis")
    return path


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def resume(posterior, path, use_affine: bool = True) -> Sampler:
    """Rebuild a :class:`Sampler` from a checkpoint written by :func:`save_checkpoint`."""
    path = str(path)
    data = np.load(path + ".npz", allow_pickle=False)
    state = json.loads(str(data["state"]))
    samples, meta = data["samples"], data["meta"]
    proposal = ProposalConfig(data["proposal_cov"], state["proposal_scale"], state["proposal_note"])
    adaptation = None if state["adaptation"] is None else AdaptationConfig(**state["adaptation"])
    basis = load_basis(path + ".basis") if Path(path + ".basis").exists() else None
    s = Sampler.__new__(Sampler)
    s.posterior, s.proposal, s.algorithm, s.adaptation = posterior, proposal, state["algorithm"], adaptation
    s.adapt_state = AdaptationState(**state["adapt_state"])
    s.seed = state["seed"]
    s.keep_outputs = "outputs" in data
    s.rng1 = np.random.Generator(np.random.PCG64())
    s.rng2 = np.random.Generator(np.random.PCG64())
    s.rng1.bit_generator.state = state["rng1"]
    s.rng2.bit_generator.state = state["rng2"]
    s.x = data["x"].copy()
    s.record = ChainRecord(samples.shape[1], s.algorithm, s.seed, max(len(samples), 1))
    s.record._x[: len(samples)] = samples
    s.record._meta[: len(samples)] = meta
    if s.keep_outputs:
        s.record._outputs = np.full((s.record._x.shape[0], data["outputs"].shape[1]), np.nan)
        s.record._outputs[: len(samples)] = data["outputs"]
    s.record.n = len(samples)
    s.record.info = state.get("info", {})
    s.rom = None
    if basis is not None:
        s.rom = ReducedOrderModel(posterior.model, basis, posterior.noise, use_affine=use_affine)
    s.cur_red = None
    s.cur_full = None
    if s.algorithm in ("reference", "full_target"):
        # these kernels always hold the full density of the current state; recomputing it is deterministic
        s.cur_full = posterior.log_full(s.x)
    return s


# ---------------------------------------------------------------------------
# pilot run
# ---------------------------------------------------------------------------


@dataclass
class PilotResult:
    proposal: ProposalConfig
    x_map: np.ndarray
    x_final: np.ndarray
    basis: ReducedBasis
    n_steps: int


def find_map(posterior, x0, log_space: bool = True, maxiter: int = 200) -> np.ndarray:
    """Posterior mode by L-BFGS on the full model (in log coordinates for positive parameters)."""
    x0 = np.asarray(x0, float)
    to_x: Callable = np.exp if log_space else (lambda z: z)
    z0 = np.log(x0) if log_space else x0.copy()

    def f(z):
        ev = posterior.log_full(to_x(z))
        val = -ev.log_density
        if log_space:
            val -= np.sum(z)  # density of log x includes the Jacobian
        return val if np.isfinite(val) else 1e300

    res = sopt.minimize(f, z0, method="L-BFGS-B", options={"maxiter": maxiter})
    return to_x(res.x)


def pilot_proposal(posterior, x0, adaptation: Optional[AdaptationConfig] = None, n_blocks: int = 6,
                   block_steps: int = 2000, seed: int = 0, log_space: bool = True,
                   initial_cov: Optional[np.ndarray] = None, min_acceptance: float = 0.05) -> PilotResult:
    """Estimate a proposal covariance from a short adaptive run on the reduced posterior.

    The posterior mode is located first.  Blocks of the epsilon-approximate
    sampler are then run from it, re-estimating the covariance from the
    second half of the samples collected so far after each block.  Blocks
    whose acceptance rate is below ``min_acceptance`` are discarded and the
    covariance is shrunk.
    """
    adaptation = adaptation or AdaptationConfig(epsilon=0.1, subchain_length=1)
    x_map = find_map(posterior, x0, log_space=log_space)
    d = x_map.size
    cov = np.diag((0.05 * np.abs(x_map) + 1e-3) ** 2) if initial_cov is None else np.asarray(initial_cov, float)
    basis = None
    x = x_map
    all_samples = []
    for b in range(n_blocks):
        prop = ProposalConfig(cov, note=f"pilot block {b}")
        s = Sampler(posterior, prop, "eps_approx", x, adaptation, basis, seed=seed + b)
        s.adapt_state.stopped = basis is not None and basis.m >= adaptation.max_dim
        try:
            s.run(block_steps)
        except SwitchToFullTarget:
            logger.warning("pilot basis reached its cap; continuing without adaptation")
        basis, x = s.basis, s.x
        moves = np.any(np.diff(s.record.samples, axis=0) != 0, axis=1).mean()
        logger.info("pilot block %d: acceptance %.2f, m = %d", b, moves, basis.m)
        if moves < min_acceptance:
            # a stuck block carries no covariance information; shrink the step instead
            cov = cov * 0.05
            continue
        all_samples.append(s.record.samples[1:])
        pooled = np.concatenate(all_samples)
        tail = pooled[len(pooled) // 2:]
        est = np.cov(tail.T) + 1e-12 * np.eye(d) * np.trace(np.cov(tail.T)) / d
        if np.all(np.linalg.eigvalsh(est) > 0):
            cov = est
    return PilotResult(ProposalConfig(cov, note=f"pilot: {n_blocks} x {block_steps} steps, seed {seed}"),
                       x_map, x, basis, n_blocks * block_steps)
