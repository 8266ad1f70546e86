"""Experiment configuration files (TOML).

A complete annotated example lives in ``configs/cat_reconstruction.toml``;
every key is optional except ``[params]``.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .analytic import TIME_UNITS
from .errors import ParameterError
from .model import SystemParams

SAMPLERS = ("povm", "sde")
TRUTH_KINDS = ("coherent", "cat", "fock")
SWEEP_AXES = ("chi", "mu")
STAGES = ("simulate", "filter", "reconstruct")


@dataclass(frozen=True)
class ScheduleSpec:
    tau: float = 0.0
    T: float = math.inf
    maintain_squeezing: bool = True
    time_units: str = "absolute"

    def __post_init__(self):
        if self.time_units not in TIME_UNITS:
            raise ParameterError(f"schedule.time_units must be one of {TIME_UNITS}")


@dataclass(frozen=True)
class TruthSpec:
    kind: str = "coherent"
    alpha_re: float = 0.0
    alpha_im: float = 0.0
    n: int = 0

    def __post_init__(self):
        if self.kind not in TRUTH_KINDS:
            raise ParameterError(f"truth.kind must be one of {TRUTH_KINDS}")

    @property
    def alpha(self):
        return complex(self.alpha_re, self.alpha_im)


@dataclass(frozen=True)
class RunSpec:
    n_trials: int = 4000
    n_phases: int = 50
    dt: float = 0.0
    base_seed: int = 0
    sampler: str = "povm"
    repetitions: int = 1
    stages: tuple = ("simulate", "filter", "reconstruct")

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        bad = set(self.stages) - set(STAGES)
        if bad:
            raise ParameterError(f"run.stages has unknown entries {sorted(bad)}; expected {STAGES}")
        if self.n_trials < 1:
            raise ParameterError("run.n_trials must be >= 1")
        if self.n_phases < 1:
            raise ParameterError("run.n_phases must be >= 1")
        if self.repetitions < 1:
            raise ParameterError("run.repetitions must be >= 1")
        if self.sampler not in SAMPLERS:
            raise ParameterError(f"run.sampler must be one of {SAMPLERS}")


@dataclass(frozen=True)
class ReconstructSpec:
    dim: int = 0
    tol: float = 1e-6
    max_iter: int = 2000
    dilution: float = 1.0
    truncation_loss: float = 1e-5


@dataclass(frozen=True)
class WignerSpec:
    half_width: float = 6.0
    points: int = 121


@dataclass(frozen=True)
class SweepSpec:
    axis: str = "chi"
    start: float = 0.0
    stop: float = 20.0
    num: int = 201

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ParameterError(f"analytic.axis must be one of {SWEEP_AXES}")
        if self.num < 2 or not self.stop > self.start:
            raise ParameterError("analytic sweep needs num >= 2 and stop > start")


@dataclass(frozen=True)
class ExperimentConfig:
    params: SystemParams
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    run: RunSpec = field(default_factory=RunSpec)
    truth: TruthSpec = field(default_factory=TruthSpec)
    reconstruct: ReconstructSpec = field(default_factory=ReconstructSpec)
    wigner: WignerSpec = field(default_factory=WignerSpec)
    analytic: SweepSpec = field(default_factory=SweepSpec)
    output_dir: str = "out"

    def to_mapping(self):
        out = {"params": self.params.to_mapping(), "output_dir": self.output_dir}
        for name in ("schedule", "run", "truth", "reconstruct", "wigner", "analytic"):
            out[name] = asdict(getattr(self, name))
        return out

    def data_hash(self):
        """Hash of everything that changes the simulated POVM elements."""
        m = self.to_mapping()
        m["run"].pop("stages")
        m["run"].pop("repetitions")
        return _digest({k: m[k] for k in ("params", "schedule", "run", "truth")})

    def config_hash(self):
        m = self.to_mapping()
        m.pop("output_dir")
        return _digest(m)


def _digest(obj):
    text = json.dumps(obj, sort_keys=True, default=repr)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _section(cls, raw, name):
    raw = dict(raw.get(name, {}))
    known = set(cls.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ParameterError(f"[{name}] has unknown keys {sorted(unknown)}")
    if name == "schedule" and isinstance(raw.get("T"), str):
        if raw["T"].lower() not in ("inf", "infinite"):
            raise ParameterError("schedule.T must be a number or 'inf'")
        raw["T"] = math.inf
    if name == "truth" and "alpha" in raw:
        raise ParameterError("use truth.alpha_re and truth.alpha_im")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ParameterError(f"[{name}]: {exc}") from None


def config_from_mapping(raw) -> ExperimentConfig:
    if "params" not in raw:
        raise ParameterError("configuration needs a [params] table")
    allowed = {"params", "schedule", "run", "truth", "reconstruct", "wigner", "analytic", "output_dir"}
    unknown = set(raw) - allowed
    if unknown:
        raise ParameterError(f"unknown configuration tables {sorted(unknown)}")
    return ExperimentConfig(
        params=SystemParams.from_mapping(dict(raw["params"])),
        schedule=_section(ScheduleSpec, raw, "schedule"),
        run=_section(RunSpec, raw, "run"),
        truth=_section(TruthSpec, raw, "truth"),
        reconstruct=_section(ReconstructSpec, raw, "reconstruct"),
        wigner=_section(WignerSpec, raw, "wigner"),
        analytic=_section(SweepSpec, raw, "analytic"),
        output_dir=str(raw.get("output_dir", "out")),
    )


def load_config(path) -> ExperimentConfig:
    """Parse a TOML file.

    Raises
    ------
    ParameterError
        On syntax errors, unknown keys or invalid values.
    """
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ParameterError(f"cannot read {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ParameterError(f"{path}: {exc}") from None
    cfg = config_from_mapping(raw)
    if not Path(cfg.output_dir).is_absolute():
        cfg = ExperimentConfig(**{**cfg.__dict__, "output_dir": os.path.normpath(Path(path).parent / cfg.output_dir)})
    return cfg
