"""Command-line entry point: ``romcmc {run,pod-study,snr-study,export,verify}``."""

from __future__ import annotations

import argparse
import json
import logging
import subprocess
import sys
from pathlib import Path

from . import harness
from .config import ExperimentConfig, emit, load, with_overrides
from .errors import ChainAborted, ConfigError, StateError, SwitchToFullTarget

logger = logging.getLogger("romcmc")


def _config(args) -> ExperimentConfig:
    cfg = load(args.config) if args.config else ExperimentConfig()
    return with_overrides(cfg, seed=args.seed, out_dir=args.out)


def _add_common(p):
    p.add_argument("--config", help="INI configuration file (defaults apply when omitted)")
    p.add_argument("--seed", type=int, help="override sampler.seed")
    p.add_argument("--out", help="override output.out_dir")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="romcmc", description="MCMC with adaptively built reduced-order models")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one chain as configured")
    _add_common(p)
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint in the output directory")

    p = sub.add_parser("pod-study", help="compare data-driven and prior-POD bases")
    _add_common(p)

    p = sub.add_parser("snr-study", help="tightness and basis dimension across signal-to-noise ratios")
    _add_common(p)

    p = sub.add_parser("export", help="write chain and histogram data of a finished run")
    p.add_argument("run_dir")
    p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("verify", help="run the acceptance tests")
    p.add_argument("pytest_args", nargs="*")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        if args.command == "run":
            cfg = _config(args)
            sys.stdout.write(emit(cfg))
            res = harness.run_experiment(cfg, resume_run=args.resume)
            print(json.dumps({k: res.summary.get(k) for k in (
                "error_threshold", "avg_beta", "full_evals", "basis_dim", "cpu_time_s", "ess", "ess_per_s",
                "speedup", "mu_complement")}, indent=2))
            print(f"run directory: {res.run_dir}")
            return 3 if "switch_to_full_target" in res.summary else 0
        if args.command == "pod-study":
            rows = harness.study_pod_comparison(_config(args))
            for r in rows:
                print(f"{r['method']:12s} m={r['m']:4d} avg_linf_error={r['avg_linf_error']:.4g}")
            return 0
        if args.command == "snr-study":
            rows = harness.study_snr_sweep(_config(args))
            for r in rows:
                print(f"snr={r['snr']:g} tightness={r['tightness']:.4g} basis_dim={r['basis_dim']}")
            return 0
        if args.command == "export":
            for p in harness.export(args.run_dir, args.format):
                print(p)
            return 0
        if args.command == "verify":
            tests = Path(__file__).resolve().parents[2] / "tests" / "test_acceptance.py"
            if not tests.exists():
                print(f"acceptance tests not found at {tests}", file=sys.stderr)
                return 2
            return subprocess.call([sys.executable, "-m", "pytest", str(tests), *args.pytest_args])
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except ChainAborted as exc:
        print(f"chain aborted: {exc}; checkpoint: {exc.checkpoint}", file=sys.stderr)
        return 4
    except (StateError, SwitchToFullTarget, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
