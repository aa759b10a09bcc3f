"""Acceptance criteria C1-C12 at desk scale.

Every test records one PASS/FAIL line that is printed in the terminal summary.
Desk-scale run lengths and their rationale live in ``acceptance_support``.
"""

import time

import numpy as np
import pytest

import acceptance_support as A
from romcmc.diagnostics import (common_bin_edges, feasible_set_measure, hellinger_gaussian_1d, iact, marginal_tv,
                                posterior_average_error, tightness, toy_quadrature_oracle)
from romcmc.problems import linear_gaussian_toy
from romcmc.rom import ReducedBasis, ReducedOrderModel
from romcmc.samplers import (EVAL_FULL, AdaptationConfig, ProposalConfig, Sampler, run_chain)

pytestmark = pytest.mark.acceptance

# pinned tolerances
C1_STEPS, C1_BURN, C1_MAX_SE = 100_000, 1_000, 3.0
C1_SUBCHAIN = 5
C2_EPSILONS, C2_MIN_BETA = (1e-1, 1e-2), 0.90
C3_MIN_SAMPLES = 20_000
C5_FT_OVER_REF, C5_EA_OVER_FT = 10.0, 2.0
C6_MAX_FULL = 100
C7_DIMS, C7_SAMPLES = (20, 40), 500
C8_SNRS, C8_EPSILON = (10.0, 50.0, 100.0), 1e-2
C9_RANGE, C9_CRITERION = (80, 140), 1e-8
C10_AR_RHO, C10_AR_N, C10_AR_REL, C10_HELL_TOL = 0.9, 10**6, 0.05, 1e-6
C12_MAX_TV, C12_BINS = 0.1, 50


def test_c1_exactness_on_linear_gaussian_toy(report):
    t0 = time.perf_counter()
    lin = linear_gaussian_toy()
    p = lin.problem
    prop = ProposalConfig(lin.post_cov)
    runs = {
        "reference": run_chain("reference", p.posterior, lin.post_mean, C1_STEPS, prop, seed=1,
                               capacity=C1_STEPS + 1),
        "full_target": run_chain("full_target", p.posterior, lin.post_mean, C1_STEPS, prop,
                                 AdaptationConfig(epsilon=0.1, subchain_length=C1_SUBCHAIN), seed=2,
                                 capacity=C1_STEPS + 1),
        "eps_approx": run_chain("eps_approx", p.posterior, lin.post_mean, C1_STEPS, prop,
                                AdaptationConfig(epsilon=0.1), seed=3, basis=ReducedBasis.from_columns(np.eye(2)),
                                capacity=C1_STEPS + 1),
    }
    iu = np.triu_indices(2)
    worst = {}
    for name, rec in runs.items():
        x = rec.samples[C1_BURN + 1:]
        se_m, se_c = A.mc_standard_errors(x, lin.post_mean)
        z_mean = np.abs(x.mean(0) - lin.post_mean) / se_m
        z_cov = np.abs(np.cov(x.T) - lin.post_cov)[iu] / se_c[iu]
        worst[name] = float(max(z_mean.max(), z_cov.max()))
    ok = all(v <= C1_MAX_SE for v in worst.values())
    detail = ", ".join(f"{k} {v:.2f} SE" for k, v in worst.items())
    report("C1", ok, f"max |error| / MC standard error ({detail}; limit {C1_MAX_SE}); "
                     f"{time.perf_counter() - t0:.0f} s")
    assert ok, worst


def test_c2_stage_two_acceptance(report):
    betas = {}
    for eps in C2_EPSILONS:
        extra = A.FT_EXTRA if eps == 1e-1 else 0
        betas[eps] = A.full_target(eps, A.DESK_MESH, A.FT_STEPS, extra)["avg_beta"]
    ok = all(b >= C2_MIN_BETA for b in betas.values())
    report("C2", ok, "average beta over %d steps: %s (need >= %.2f)" % (
        A.FT_STEPS, ", ".join(f"eps={e:g}: {b:.4f}" for e, b in betas.items()), C2_MIN_BETA))
    assert ok, betas


def test_c3_feasible_set_control(report):
    ref = A.reference()
    burn = ref["burn"]
    samples, outputs = ref["samples"][burn + 1:], ref["outputs"][burn + 1:]
    p = A.problem9d()
    mus = {}
    for eps in A.EPSILONS:
        bases = {"eps_approx": A.eps_approx(eps)["basis"]}
        if eps in C2_EPSILONS:
            extra = A.FT_EXTRA if eps == 1e-1 else 0
            bases["full_target"] = A.full_target(eps, A.DESK_MESH, A.FT_STEPS, extra)["basis"]
        for name, basis in bases.items():
            rom = ReducedOrderModel(p.model, basis, p.noise)
            rep = feasible_set_measure(samples, rom, eps, outputs, with_indicator=False)
            mus[(name, eps)] = (basis.m, rep)
    ok = len(samples) >= C3_MIN_SAMPLES and all(r.mu_complement < k[1] for k, (_, r) in mus.items())
    detail = "; ".join(f"{n} eps={e:g} (m={m}): {r.describe()}" for (n, e), (m, r) in mus.items())
    report("C3", ok, f"{len(samples)} reference samples; {detail}")
    assert ok, {k: r.mu_complement for k, (_, r) in mus.items()}


def test_c4_basis_dimension_ordering(report):
    dims = [A.eps_approx(eps)["basis"].m for eps in A.EPSILONS]
    ok = all(a < b for a, b in zip(dims, dims[1:]))
    report("C4", ok, "eps-approximate basis dimensions for eps = %s: %s (need strictly increasing)" % (
        ", ".join(f"{e:g}" for e in A.EPSILONS), dims))
    assert ok, dims


def test_c5_speedup_at_large_mesh(report):
    mesh = A.LARGE_MESH
    ref = A.reference(mesh, A.LARGE_REF_STEPS)
    ft = A.full_target(1e-1, mesh, A.LARGE_FT_STEPS, 0)
    ea = A.eps_approx(1e-1, mesh, A.LARGE_EA_STEPS)
    s_ft = ft["ess_per_s"] / ref["ess_per_s"]
    s_ea = ea["ess_per_s"] / ft["ess_per_s"]
    ok = s_ft >= C5_FT_OVER_REF and s_ea >= C5_EA_OVER_FT
    report("C5", ok, f"{mesh}x{mesh} mesh: ESS/s reference {ref['ess_per_s']:.3g}, full target "
                     f"{ft['ess_per_s']:.3g}, eps-approximate {ea['ess_per_s']:.3g}; full target / reference "
                     f"{s_ft:.1f} (need >= {C5_FT_OVER_REF:g}), eps-approximate / full target {s_ea:.1f} "
                     f"(need >= {C5_EA_OVER_FT:g})")
    assert ok, (s_ft, s_ea)


def test_c6_full_model_evaluations(report):
    counts = [A.eps_approx(eps)["full_evals"] for eps in A.EPSILONS]
    ok = counts[0] <= C6_MAX_FULL and all(a < b for a, b in zip(counts, counts[1:]))
    report("C6", ok, "full evaluations over %d steps for eps = %s: %s (need <= %d at eps=0.1, increasing)" % (
        A.EA_STEPS, ", ".join(f"{e:g}" for e in A.EPSILONS), counts, C6_MAX_FULL))
    assert ok, counts


def test_c7_data_driven_beats_prior_pod(report):
    ref = A.reference()
    burn = ref["burn"]
    idx = np.linspace(burn + 1, len(ref["samples"]) - 1, C7_SAMPLES).astype(int)
    samples, outputs = ref["samples"][idx], ref["outputs"][idx]
    p = A.problem9d()
    data = A.eps_approx(1e-3)["basis"]
    pod = A.pod(A.DESK_MESH)["basis"]
    rows = []
    for m in C7_DIMS:
        e_data = posterior_average_error(samples, ReducedOrderModel(p.model, data.truncated(m), p.noise), outputs)
        e_pod = posterior_average_error(samples, ReducedOrderModel(p.model, pod.truncated(m), p.noise), outputs)
        rows.append((m, e_data, e_pod))
    ok = all(d <= q for _, d, q in rows)
    report("C7", ok, "posterior-averaged ||t||_inf, data-driven vs prior POD: " + "; ".join(
        f"m={m}: {d:.3g} vs {q:.3g}" for m, d, q in rows))
    assert ok, rows


def test_c8_snr_study(report):
    rows = []
    for snr in C8_SNRS:
        r = A.eps_approx(C8_EPSILON, A.DESK_MESH, A.EA_STEPS, snr)
        post = r["samples"][r["burn"] + 1:]
        rows.append((snr, r["basis"].m, tightness(post, A.problem9d(A.DESK_MESH, snr).prior)))
    dims = [m for _, m, _ in rows]
    tight = [t for _, _, t in rows]
    ok = all(a >= b for a, b in zip(dims, dims[1:])) and all(a < b for a, b in zip(tight, tight[1:]))
    report("C8", ok, "SNR, basis dimension, tightness: " + "; ".join(
        f"{s:g}: m={m}, {t:.3g}" for s, m, t in rows) + " (need m weakly decreasing, tightness increasing)")
    assert ok, rows


def _trailing(lam, k):
    lam = np.asarray(lam, float)
    return np.sqrt(np.sum(lam[k:] ** 2) / np.sum(lam**2))


def test_c9_prior_pod_count(report):
    large = A.pod(A.LARGE_MESH)
    desk = A.pod(A.DESK_MESH)
    k_desk = desk["retained"]
    invariant = _trailing(desk["eigenvalues"], k_desk) <= C9_CRITERION < _trailing(desk["eigenvalues"], k_desk - 1)
    k = large["retained"]
    ok = C9_RANGE[0] <= k <= C9_RANGE[1] and invariant
    report("C9", ok, f"retained vectors at {A.LARGE_MESH}x{A.LARGE_MESH}: {k} (need {C9_RANGE}); "
                     f"at {A.DESK_MESH}x{A.DESK_MESH}: {k_desk}, energy invariant {'holds' if invariant else 'violated'}")
    assert ok, (k, k_desk, invariant)


def test_c10_diagnostic_oracles(report):
    rng = np.random.default_rng(1)
    e = rng.standard_normal(C10_AR_N)
    x = np.empty(C10_AR_N)
    x[0] = e[0] / np.sqrt(1 - C10_AR_RHO**2)
    for i in range(1, C10_AR_N):
        x[i] = C10_AR_RHO * x[i - 1] + e[i]
    exact = 0.5 + C10_AR_RHO / (1 - C10_AR_RHO)
    tau = iact(x)
    m1, s1, m2, s2 = 0.2, 0.6, -0.1, 0.9
    logn = lambda m, s: (lambda X: -0.5 * ((X[:, 0] - m) / s) ** 2 - 0.5 * X[:, 1] ** 2)  # noqa: E731
    h = toy_quadrature_oracle(logn(m1, s1), logn(m2, s2), [(-8, 8), (-9, 9)]).hellinger
    h_exact = hellinger_gaussian_1d(m1, s1, m2, s2)
    ok = abs(tau - exact) <= C10_AR_REL * exact and abs(h - h_exact) <= C10_HELL_TOL
    report("C10", ok, f"AR(1) IACT {tau:.3f} vs {exact:g} (rel. error {abs(tau - exact) / exact:.3%}, limit 5%); "
                      f"Hellinger {h:.9f} vs {h_exact:.9f} (abs. error {abs(h - h_exact):.1e}, limit 1e-6)")
    assert ok


def test_c11_hellinger_bound_on_toy(report):
    res = A.toy_hellinger()
    d_fit = res[1e-1][1]
    K = d_fit / 1e-1
    checks = {eps: (m, d, d <= K * eps) for eps, (m, d) in res.items() if eps != 1e-1}
    ok = all(c[2] for c in checks.values())
    report("C11", ok, f"K1+K2 fitted at eps=0.1: {K:.3g} (d_Hell {d_fit:.3g}, m={res[1e-1][0]}); " + "; ".join(
        f"eps={e:g}: d_Hell {d:.3g} <= {K * e:.3g} {'yes' if c else 'no'} (m={m})" for e, (m, d, c) in checks.items()))
    assert ok, res


def test_c12_marginal_agreement(report):
    chains = {
        "reference": A.reference(),
        "full_target": A.full_target(1e-1, A.DESK_MESH, A.FT_STEPS, A.FT_EXTRA),
        "eps_approx": A.eps_approx(1e-1),
    }
    post = {k: v["samples"][v["burn"] + 1:] for k, v in chains.items()}
    edges = common_bin_edges(list(post.values()), C12_BINS)
    names = list(post)
    tv = {}
    for i in range(3):
        for j in range(i + 1, 3):
            tv[(names[i], names[j])] = marginal_tv(post[names[i]], post[names[j]], edges)
    worst = {k: float(v.max()) for k, v in tv.items()}
    ok = all(v < C12_MAX_TV for v in worst.values())
    report("C12", ok, "largest per-component TV on %d-bin marginals: %s (limit %g)" % (
        C12_BINS, ", ".join(f"{a} vs {b} {v:.3f}" for (a, b), v in worst.items()), C12_MAX_TV))
    assert ok, worst


# ---------------------------------------------------------------------------
# supporting properties on the 9D problem (no criterion line)
# ---------------------------------------------------------------------------


def test_eps_approx_branch_coverage_before_stop():
    eps = 1e-1
    r = A.eps_approx(eps)
    meta = r["meta"][1:r["adapt_steps"] + 1]
    ind = meta["indicator_inf_norm"]
    a = (meta["eval_kind"] == EVAL_FULL).sum()
    b = ((ind >= eps) & (ind < 1.0)).sum()
    c = (ind < eps).sum()
    assert a > 0 and b > 0 and c > 0, (a, b, c)


def test_beta_not_worse_with_adapted_basis():
    p, pil = A.problem9d(), A.pilot()
    final = A.full_target(1e-1, A.DESK_MESH, A.FT_STEPS, A.FT_EXTRA)["basis"]
    betas = {}
    for name, basis in (("final", final), ("m=2", final.truncated(2))):
        vals = []
        for seed in (1, 2, 3):
            s = Sampler(p.posterior, ProposalConfig(pil["cov"]), "full_target", pil["x0"],
                        AdaptationConfig(epsilon=1e-1), basis=basis.copy(), seed=seed)
            s.adapt_state.stopped = True
            s.run(200)
            vals.append(s.record.average_beta())
        betas[name] = float(np.mean(vals))
    assert betas["final"] >= betas["m=2"], betas


def test_indicator_tracks_true_error():
    ref = A.reference()
    idx = np.linspace(ref["burn"] + 1, len(ref["samples"]) - 1, 100).astype(int)
    p = A.problem9d()
    basis = A.full_target(1e-1, A.DESK_MESH, A.FT_STEPS, A.FT_EXTRA)["basis"].copy()
    rom = ReducedOrderModel(p.model, basis, p.noise)
    pairs = feasible_set_measure(ref["samples"][idx], rom, 1e-1, ref["outputs"][idx]).pairs
    assert np.corrcoef(pairs[:, 0], pairs[:, 1])[0, 1] > 0.9, pairs
