"""Configuration-driven experiments: single runs, the POD comparison, the SNR sweep and export.

A run directory contains::

    config.ini      echo of the configuration
    proposal.npz    proposal covariance and scale, pilot mode and final state
    chain.bin       binary chain log (see :mod:`romcmc.chainio`)
    chain.csv       the same chain as CSV
    outputs.npy     full-model outputs per row (reference runs only)
    basis.bin       final reduced basis (adaptive runs only)
    summary.json    table row plus run details
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import chainio
from .config import ExperimentConfig, emit
from .diagnostics import (efficiency_report, feasible_set_measure, posterior_average_error, summary_record,
                          tightness)
from .errors import StateError, SwitchToFullTarget
from .problems import Problem, gp_highdim, rbf9d, toy2d
from .rom import ReducedOrderModel, load_basis, pod_from_prior, save_basis
from .samplers import ProposalConfig, Sampler, pilot_proposal, resume

logger = logging.getLogger(__name__)

N_BINS = 50


def build_problem(cfg: ExperimentConfig, snr: Optional[float] = None) -> Problem:
    snr = cfg.snr if snr is None else snr
    if cfg.problem == "rbf9d":
        return rbf9d(cfg.mesh, snr, cfg.data_seed)
    if cfg.problem == "gp_highdim":
        return gp_highdim(cfg.mesh, snr, cfg.data_seed)
    return toy2d(cfg.mesh, snr, cfg.data_seed)


def _prior_proposal(problem: Problem) -> ProposalConfig:
    sd = 0.1 * np.asarray(problem.prior.marginal_std(), float)
    if problem.positive:
        sd = np.minimum(sd, 0.1)
    return ProposalConfig(np.diag(sd**2), note="prior-scaled fallback")


def prepare_proposal(cfg: ExperimentConfig, problem: Problem, run_dir: Path):
    """Load or compute the pilot proposal; returns ``(proposal, x_map, x_pilot)``."""
    path = run_dir / "proposal.npz"
    if path.exists():
        d = np.load(path)
        scale = float(d["scale"])
        return ProposalConfig(d["cov"], scale, str(d["note"])), d["x_map"], d["x_pilot"]
    x0 = np.asarray(problem.prior.median(), float)
    if cfg.iterations == 0:
        prop = _prior_proposal(problem)
        x_map = x_pilot = x0
    else:
        pil = pilot_proposal(problem.posterior, x0, n_blocks=cfg.pilot_blocks, block_steps=cfg.pilot_steps,
                             seed=cfg.pilot_seed, log_space=problem.positive)
        prop, x_map, x_pilot = pil.proposal, pil.x_map, pil.x_final
    if cfg.scale is not None:
        prop = ProposalConfig(prop.covariance, cfg.scale, prop.note)
    np.savez(path, cov=prop.covariance, scale=prop.scale, note=prop.note, x_map=x_map, x_pilot=x_pilot)
    return prop, x_map, x_pilot


def starting_point(cfg: ExperimentConfig, problem: Problem, x_pilot) -> np.ndarray:
    if cfg.start == "pilot":
        return np.asarray(x_pilot, float)
    if cfg.start == "truth":
        return np.asarray(problem.truth, float)
    return np.asarray(problem.prior.median(), float)


@dataclass
class RunResult:
    run_dir: Path
    sampler: Sampler
    summary: dict


def _load_reference(reference_dir):
    ref = Path(reference_dir)
    if not (ref / "chain.bin").exists():
        raise StateError(f"no reference chain in {ref}")
    samples, meta, hdr = chainio.read_chain_log(ref / "chain.bin")
    outputs = np.load(ref / "outputs.npy") if (ref / "outputs.npy").exists() else None
    summary = json.loads((ref / "summary.json").read_text()) if (ref / "summary.json").exists() else {}
    return samples, meta, outputs, summary


def run_experiment(cfg: ExperimentConfig, out_dir=None, resume_run: bool = False) -> RunResult:
    """Run one chain as configured and write its run directory."""
    run_dir = Path(out_dir or cfg.out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.ini").write_text(emit(cfg))
    problem = build_problem(cfg)
    proposal, x_map, x_pilot = prepare_proposal(cfg, problem, run_dir)
    ckpt = run_dir / "checkpoint"
    keep_outputs = cfg.algorithm == "reference"

    t0 = time.perf_counter()
    if resume_run and Path(str(ckpt) + ".npz").exists():
        sampler = resume(problem.posterior, ckpt)
        done = sampler.record.n - 1
        logger.info("resuming %s at step %d", cfg.algorithm, done)
    else:
        sampler = Sampler(problem.posterior, proposal, cfg.algorithm, starting_point(cfg, problem, x_pilot),
                          cfg.adaptation() if cfg.algorithm != "reference" else None, seed=cfg.seed,
                          keep_outputs=keep_outputs, capacity=cfg.iterations + 1)
        done = 0
    remaining = cfg.iterations - done
    switched = None
    if remaining > 0:
        try:
            sampler.run(remaining, checkpoint=str(ckpt), checkpoint_every=cfg.checkpoint_every,
                        progress_every=max(cfg.iterations // 10, 1))
        except SwitchToFullTarget as exc:
            switched = str(exc)
            logger.warning("%s", exc)
    elapsed = time.perf_counter() - t0

    rec = sampler.record
    chainio.write_chain_log(run_dir / "chain.bin", rec)
    chainio.write_chain_csv(run_dir / "chain.csv", rec.samples, rec.meta, timing=cfg.timing_in_csv)
    if rec.outputs is not None:
        np.save(run_dir / "outputs.npy", rec.outputs)
    if sampler.rom is not None:
        save_basis(run_dir / "basis.bin", sampler.basis)

    summary = {"config": {"problem": cfg.problem, "algorithm": cfg.algorithm, "mesh": cfg.mesh, "seed": cfg.seed}}
    burn = min(cfg.burn_in, max(rec.n - 2, 0))
    row = {k: None for k in ("error_threshold", "avg_beta", "full_evals", "basis_dim", "cpu_time_s", "ess",
                             "ess_per_s", "speedup", "mu_complement")}
    if rec.n - 1 - burn >= 10:
        rep = efficiency_report(rec, burn)
        baseline = None
        ref = None
        if cfg.reference_dir:
            ref = _load_reference(cfg.reference_dir)
            if ref[3].get("ess_per_s"):
                baseline = _StubReport(ref[3]["ess_per_s"])
        mu = None
        if sampler.rom is not None and ref is not None and ref[2] is not None:
            rburn = int(ref[3].get("burn_in", 0))
            fr = feasible_set_measure(ref[0][rburn + 1:], ReducedOrderModel(problem.model, sampler.basis,
                                      problem.noise), cfg.epsilon, ref[2][rburn + 1:], with_indicator=False)
            mu = fr.mu_complement
            summary["feasibility"] = fr.describe()
        row = summary_record(rep, baseline, cfg.epsilon if sampler.rom is not None else None,
                             rec.average_beta(burn) if cfg.algorithm == "full_target" else None,
                             sampler.basis.m if sampler.rom is not None else None, mu)
        if baseline is None and cfg.algorithm == "reference":
            row["speedup"] = 1.0
        summary["ess_components"] = rep.ess.tolist()
    else:
        row["full_evals"] = rec.full_evaluations()
        row["cpu_time_s"] = rec.wall_time_s()
        row["basis_dim"] = sampler.basis.m if sampler.rom is not None else None
    summary.update(row)
    summary["burn_in"] = cfg.burn_in
    summary["iterations"] = rec.n - 1
    summary["elapsed_s"] = elapsed
    summary["reduced_evals"] = rec.reduced_evaluations()
    summary["branch_counts"] = np.bincount(rec.meta["eval_kind"], minlength=4).tolist()
    if sampler.rom is not None:
        st = sampler.adapt_state
        summary.update({"enrichments": st.enrichments, "adaptation_stopped": st.stopped,
                        "stop_reason": st.stop_reason})
    if switched:
        summary["switch_to_full_target"] = switched
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2, default=float))
    for suffix in (".npz", ".basis"):
        p = Path(str(ckpt) + suffix)
        if p.exists():
            p.unlink()
    return RunResult(run_dir, sampler, summary)


class _StubReport:
    def __init__(self, ess_per_s):
        self.ess_per_s = float(ess_per_s)


def study_pod_comparison(cfg: ExperimentConfig, out_dir=None, data_basis=None, reference=None) -> list:
    """Posterior-averaged ``||t||_inf`` of data-driven versus prior-POD bases at matched dimensions.

    ``reference`` may be given as ``(samples, outputs)``; otherwise it is read
    from ``cfg.reference_dir``.  ``data_basis`` defaults to the basis of an
    epsilon-approximate run with the configured settings.
    """
    run_dir = Path(out_dir or cfg.out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    problem = build_problem(cfg)
    if reference is None:
        if not cfg.reference_dir:
            raise StateError("the POD comparison needs a reference chain (study.reference_dir)")
        samples, _, outputs, rsum = _load_reference(cfg.reference_dir)
        rburn = int(rsum.get("burn_in", 0))
        samples, outputs = samples[rburn + 1:], None if outputs is None else outputs[rburn + 1:]
    else:
        samples, outputs = reference
    idx = np.linspace(0, len(samples) - 1, min(cfg.study_samples, len(samples))).astype(int)
    samples = samples[idx]
    outputs = None if outputs is None else outputs[idx]

    if data_basis is None:
        if (run_dir / "basis.bin").exists():
            data_basis = load_basis(run_dir / "basis.bin")
        else:
            prop, _, x_pilot = prepare_proposal(cfg, problem, run_dir)
            s = Sampler(problem.posterior, prop, "eps_approx", starting_point(cfg, problem, x_pilot),
                        cfg.adaptation(), seed=cfg.seed)
            try:
                s.run(cfg.iterations)
            except SwitchToFullTarget as exc:
                logger.warning("%s", exc)
            data_basis = s.basis
            save_basis(run_dir / "basis.bin", data_basis)
    pod_basis, spectrum = pod_from_prior(problem.model, problem.prior, cfg.pod_samples, cfg.pod_energy,
                                         np.random.default_rng(cfg.seed))
    with open(run_dir / "pod_spectrum.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "eigenvalue", "retained"])
        for i, lam in enumerate(spectrum.eigenvalues):
            w.writerow([i + 1, repr(float(lam)), int(i < spectrum.retained)])

    rows = []
    dims = sorted(set(cfg.pod_dims))
    for method, basis in (("data_driven", data_basis), ("prior_pod", pod_basis)):
        for m in sorted(set(dims + [basis.m])):
            if m > basis.m:
                continue
            rom = ReducedOrderModel(problem.model, basis.truncated(m), problem.noise)
            err = posterior_average_error(samples, rom, outputs)
            rows.append({"method": method, "m": m, "avg_linf_error": err})
    with open(run_dir / "pod_comparison.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, ["method", "m", "avg_linf_error"])
        w.writeheader()
        for r in rows:
            w.writerow({**r, "avg_linf_error": repr(float(r["avg_linf_error"]))})
    (run_dir / "pod_summary.json").write_text(json.dumps({"retained": spectrum.retained,
                                                          "criterion": spectrum.criterion,
                                                          "n_samples": cfg.pod_samples}, indent=2))
    return rows


def study_snr_sweep(cfg: ExperimentConfig, out_dir=None) -> list:
    """One adaptive run per SNR; records posterior tightness and final basis dimension."""
    run_dir = Path(out_dir or cfg.out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    if cfg.algorithm == "reference":
        raise StateError("the SNR sweep needs an adaptive algorithm")
    rows = []
    for snr in cfg.snr_list:
        problem = build_problem(cfg, snr)
        sub = run_dir / f"snr_{snr:g}"
        sub.mkdir(exist_ok=True)
        prop, _, x_pilot = prepare_proposal(cfg, problem, sub)
        s = Sampler(problem.posterior, prop, cfg.algorithm, starting_point(cfg, problem, x_pilot),
                    cfg.adaptation(), seed=cfg.seed, capacity=cfg.iterations + 1)
        try:
            s.run(cfg.iterations)
        except SwitchToFullTarget as exc:
            logger.warning("SNR %g: %s", snr, exc)
        post = s.record.samples[s.record.post_burn_in(cfg.burn_in)]
        rows.append({"snr": float(snr), "tightness": tightness(post, problem.prior), "basis_dim": s.basis.m})
        logger.info("SNR %g: tightness %.4g, m = %d", snr, rows[-1]["tightness"], s.basis.m)
    with open(run_dir / "snr_sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, ["snr", "tightness", "basis_dim"])
        w.writeheader()
        for r in rows:
            w.writerow({"snr": repr(r["snr"]), "tightness": repr(float(r["tightness"])), "basis_dim": r["basis_dim"]})
    return rows


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def histogram_data(samples, bins: int = N_BINS, edges=None):
    """Per-component marginal counts and pairwise 2D counts on shared edges."""
    samples = np.asarray(samples, float)
    dim = samples.shape[1]
    if edges is None:
        if len(samples):
            lo, hi = samples.min(0), samples.max(0)
            hi = np.where(hi > lo, hi, lo + 1.0)
        else:
            lo, hi = np.zeros(dim), np.ones(dim)
        edges = [np.linspace(l, h, bins + 1) for l, h in zip(lo, hi)]
    marg = [np.histogram(samples[:, j], edges[j])[0] for j in range(dim)]
    pairs = {}
    for i in range(dim):
        for j in range(i + 1, dim):
            pairs[(i, j)] = np.histogram2d(samples[:, i], samples[:, j], [edges[i], edges[j]])[0].astype(int)
    return edges, marg, pairs


def export(run_dir, fmt: str = "csv") -> list:
    """Write chain, marginal and pairwise histogram data of a finished run; returns written paths."""
    run_dir = Path(run_dir)
    if not (run_dir / "chain.bin").exists():
        raise StateError(f"no chain log in {run_dir}")
    if fmt not in ("csv", "json"):
        raise ValueError("format must be 'csv' or 'json'")
    samples, meta, hdr = chainio.read_chain_log(run_dir / "chain.bin")
    summary = json.loads((run_dir / "summary.json").read_text()) if (run_dir / "summary.json").exists() else {}
    burn = int(summary.get("burn_in", 0))
    post = samples[min(burn + 1, len(samples)):]
    edges, marg, pairs = histogram_data(post)
    written = []
    if fmt == "csv":
        p = run_dir / "export_chain.csv"
        chainio.write_chain_csv(p, samples, meta)
        written.append(p)
        p = run_dir / "marginals.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["component", "bin", "lo", "hi", "count"])
            if len(post):
                for j, (e, c) in enumerate(zip(edges, marg)):
                    for b in range(len(c)):
                        w.writerow([j + 1, b, repr(float(e[b])), repr(float(e[b + 1])), int(c[b])])
        written.append(p)
        p = run_dir / "pairs.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "bin_i", "bin_j", "count"])
            if len(post):
                for (i, j), H in pairs.items():
                    for bi, bj in zip(*np.nonzero(H >= 0)):
                        w.writerow([i + 1, j + 1, bi, bj, int(H[bi, bj])])
        written.append(p)
    else:
        p = run_dir / "export.json"
        doc = {
            "algorithm": hdr["algorithm"], "seed": hdr["seed"], "burn_in": burn, "n_samples": int(len(post)),
            "marginals": [{"component": j + 1, "edges": e.tolist(), "counts": c.tolist()}
                          for j, (e, c) in enumerate(zip(edges, marg))] if len(post) else [],
            "pairs": [{"i": i + 1, "j": j + 1, "counts": H.tolist()} for (i, j), H in pairs.items()] if len(post) else [],
        }
        p.write_text(json.dumps(doc))
        written.append(p)
    return written
