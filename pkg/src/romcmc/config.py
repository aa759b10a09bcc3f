"""Experiment configuration: INI-style sections, strict keys, exact round trip.

Example (every key shown with its default)::

    [problem]
    problem = rbf9d          # rbf9d | gp_highdim | toy2d
    mesh = 60                # elements per axis
    snr = 50.0               # sigma = max |F(truth)| / snr
    data_seed = 1            # seed of the synthetic noise

    [sampler]
    algorithm = full_target  # reference | full_target | eps_approx
    iterations = 10000
    burn_in = 2000
    seed = 0
    start = prior_median     # prior_median | pilot | truth

    [adaptation]
    epsilon = 0.1
    epsilon0 = 1.0
    subchain_length = 50
    max_dim = 200
    c = 0.1

    [proposal]
    pilot_blocks = 5
    pilot_steps = 3000
    pilot_seed = 11
    scale =                  # empty: 2.38 / sqrt(N_p)

    [output]
    out_dir = runs/default
    checkpoint_every = 1000
    timing_in_csv = false    # true writes measured wall_time_ns (CSV then differs between runs)

    [study]
    snr_list = 10, 50, 100
    pod_samples = 10000
    pod_energy = 1e-08
    pod_dims = 20, 40
    reference_dir =          # run directory of a reference chain
    study_samples = 500      # posterior samples used to average errors
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields
from typing import Optional

from .errors import ConfigError
from .samplers import AdaptationConfig

PROBLEMS = ("rbf9d", "gp_highdim", "toy2d")
RUN_ALGORITHMS = ("reference", "full_target", "eps_approx")
STARTS = ("prior_median", "pilot", "truth")


def _floats(s):
    return [float(v) for v in s.split(",") if v.strip()]


def _ints(s):
    return [int(v) for v in s.split(",") if v.strip()]


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_float(s):
    return None if s.strip() == "" else float(s)


@dataclass
class ExperimentConfig:
    # [problem]
    problem: str = "rbf9d"
    mesh: int = 60
    snr: float = 50.0
    data_seed: int = 1
    # [sampler]
    algorithm: str = "full_target"
    iterations: int = 10000
    burn_in: int = 2000
    seed: int = 0
    start: str = "prior_median"
    # [adaptation]
    epsilon: float = 0.1
    epsilon0: float = 1.0
    subchain_length: int = 50
    max_dim: int = 200
    c: float = 0.1
    # [proposal]
    pilot_blocks: int = 5
    pilot_steps: int = 3000
    pilot_seed: int = 11
    scale: Optional[float] = None
    # [output]
    out_dir: str = "runs/default"
    checkpoint_every: int = 1000
    timing_in_csv: bool = False
    # [study]
    snr_list: list = field(default_factory=lambda: [10.0, 50.0, 100.0])
    pod_samples: int = 10000
    pod_energy: float = 1e-8
    pod_dims: list = field(default_factory=lambda: [20, 40])
    reference_dir: str = ""
    study_samples: int = 500

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"must be one of {PROBLEMS}", "problem.problem")
        if self.algorithm not in RUN_ALGORITHMS:
            raise ConfigError(f"must be one of {RUN_ALGORITHMS}", "sampler.algorithm")
        if self.start not in STARTS:
            raise ConfigError(f"must be one of {STARTS}", "sampler.start")
        if self.mesh < 2:
            raise ConfigError("must be >= 2", "problem.mesh")
        if not self.snr > 0:
            raise ConfigError("must be positive", "problem.snr")
        if self.iterations < 0:
            raise ConfigError("must be >= 0", "sampler.iterations")
        if self.burn_in < 0 or (self.iterations > 0 and self.burn_in >= self.iterations) \
                or (self.iterations == 0 and self.burn_in != 0):
            raise ConfigError("must be smaller than iterations (0 when iterations is 0)", "sampler.burn_in")
        try:
            self.adaptation()
        except ValueError as exc:
            raise ConfigError(str(exc), "adaptation") from exc
        if self.scale is not None and not self.scale > 0:
            raise ConfigError("must be positive or empty", "proposal.scale")
        if self.pilot_blocks < 1 or self.pilot_steps < 1:
            raise ConfigError("pilot needs at least one block of one step", "proposal")
        if not self.snr_list or any(s <= 0 for s in self.snr_list):
            raise ConfigError("must be a nonempty list of positive values", "study.snr_list")
        if self.pod_samples < 2:
            raise ConfigError("must be >= 2", "study.pod_samples")
        if not 0 < self.pod_energy <= 1:
            raise ConfigError("must lie in (0, 1]", "study.pod_energy")

    def adaptation(self) -> AdaptationConfig:
        return AdaptationConfig(self.epsilon, self.epsilon0, self.subchain_length, self.max_dim, self.c)


SECTIONS = {
    "problem": ("problem", "mesh", "snr", "data_seed"),
    "sampler": ("algorithm", "iterations", "burn_in", "seed", "start"),
    "adaptation": ("epsilon", "epsilon0", "subchain_length", "max_dim", "c"),
    "proposal": ("pilot_blocks", "pilot_steps", "pilot_seed", "scale"),
    "output": ("out_dir", "checkpoint_every", "timing_in_csv"),
    "study": ("snr_list", "pod_samples", "pod_energy", "pod_dims", "reference_dir", "study_samples"),
}

_PARSERS = {
    "mesh": int, "data_seed": int, "iterations": int, "burn_in": int, "seed": int, "subchain_length": int,
    "max_dim": int, "pilot_blocks": int, "pilot_steps": int, "pilot_seed": int, "checkpoint_every": int,
    "pod_samples": int, "study_samples": int,
    "snr": float, "epsilon": float, "epsilon0": float, "c": float, "pod_energy": float,
    "scale": _opt_float, "timing_in_csv": _bool, "snr_list": _floats, "pod_dims": _ints,
}


def _emit_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return ", ".join(_emit_value(x) for x in v)
    return str(v)


def emit(config: ExperimentConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    for section, keys in SECTIONS.items():
        cp[section] = {k: _emit_value(getattr(config, k)) for k in keys}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def parse(text: str) -> ExperimentConfig:
    """Parse INI text; unknown sections or keys raise ConfigError naming the field."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from exc
    values = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError("unknown section", section)
        for key, raw in cp[section].items():
            if key not in SECTIONS[section]:
                raise ConfigError("unknown key", f"{section}.{key}")
            conv = _PARSERS.get(key, str)
            try:
                values[key] = conv(raw) if conv is not str else raw.strip()
            except ValueError as exc:
                raise ConfigError(f"cannot parse {raw!r}: {exc}", f"{section}.{key}") from exc
    return ExperimentConfig(**values)


def load(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse(fh.read())


def with_overrides(config: ExperimentConfig, **kw) -> ExperimentConfig:
    vals = {f.name: getattr(config, f.name) for f in fields(config)}
    vals.update({k: v for k, v in kw.items() if v is not None})
    return ExperimentConfig(**vals)
