"""Experiment configuration and its JSON form.

Every key is optional; missing keys take the defaults of :class:`ExperimentConfig`.
See the README for the full schema.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .model import PhysicalParams
from .sde import PumpProcess, SimGrid

SWEEP_PARAMS = ("T", "g", "c")

DEFAULT_SWEEP_VALUES = {
    "T": [round(0.1 * i, 10) for i in range(11)],
    "g": [round(0.005 * i, 10) for i in range(1, 8)],
    "c": [round(0.3 + 0.1 * i, 10) for i in range(5)],
}
# the tendency-constant sweep is run at a smaller diffusion
DEFAULT_SWEEP_OVERRIDES = {"T": {}, "g": {}, "c": {"g": 0.025}}


@dataclass(frozen=True)
class SweepSpec:
    param: str = "T"
    values: tuple | None = None
    overrides: dict | None = None

    def __post_init__(self):
        if self.param not in SWEEP_PARAMS:
            raise ConfigurationError(
                f"sweep parameter must be one of {SWEEP_PARAMS}, got {self.param!r}"
            )
        if self.values is not None and len(self.values) == 0:
            raise ConfigurationError("sweep grid must not be empty")

    @property
    def grid(self) -> list[float]:
        if self.values is None:
            return list(DEFAULT_SWEEP_VALUES[self.param])
        return [float(v) for v in self.values]

    @property
    def fixed(self) -> dict:
        if self.overrides is None:
            return dict(DEFAULT_SWEEP_OVERRIDES[self.param])
        return dict(self.overrides)


@dataclass(frozen=True)
class ExperimentConfig:
    physical: PhysicalParams = field(default_factory=PhysicalParams)
    pump: PumpProcess = field(default_factory=PumpProcess)
    theta_lb: float | None = None
    theta_lc: float | None = None
    dt: float = 1e-3
    t_final: float = 100.0
    x0: tuple = (0.0, 0.0)
    initial_cov: tuple | None = None
    pump_prior_var: float = 0.0
    n_trials: int = 1000
    fast_n_trials: int = 200
    master_seed: int = 0
    burn_in: float = 0.0
    b_normalization: str = "consistent"
    sweep: SweepSpec = field(default_factory=SweepSpec)
    workers: int = 1
    output_dir: str = "results"
    figure_trial: int = 0
    csv_stride: int = 10

    def __post_init__(self):
        if self.n_trials < 1 or self.fast_n_trials < 1:
            raise ConfigurationError("trial counts must be >= 1")
        if self.b_normalization not in ("consistent", "paper"):
            raise ConfigurationError(
                f"b_normalization must be 'consistent' or 'paper', got {self.b_normalization!r}"
            )
        if len(self.x0) != 2:
            raise ConfigurationError("x0 must have two entries (q, p)")
        if self.initial_cov is not None:
            cov = np.asarray(self.initial_cov, dtype=float)
            if cov.shape != (2, 2) or not np.allclose(cov, cov.T):
                raise ConfigurationError("initial_cov must be a symmetric 2x2 matrix")
            if np.linalg.eigvalsh(cov).min() <= 0:
                raise ConfigurationError("initial_cov must be positive definite")
        if self.pump_prior_var < 0:
            raise ConfigurationError("pump_prior_var must be >= 0")
        if self.burn_in < 0 or self.burn_in >= self.t_final:
            raise ConfigurationError("burn_in must lie in [0, t_final)")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        self.grid()

    def grid(self) -> SimGrid:
        return SimGrid.from_final_time(self.dt, self.t_final)

    @property
    def initial_covariance(self) -> np.ndarray:
        if self.initial_cov is None:
            return 0.5 * self.physical.hbar * np.eye(2)
        return np.asarray(self.initial_cov, dtype=float)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def with_param(self, name: str, value: float) -> "ExperimentConfig":
        """Copy with one sweepable parameter (``T``, ``g`` or ``c``) changed."""
        if name == "T":
            return self.replace(
                physical=dataclasses.replace(self.physical, transmittance=float(value))
            )
        if name == "g":
            return self.replace(pump=dataclasses.replace(self.pump, g=float(value)))
        if name == "c":
            return self.replace(pump=dataclasses.replace(self.pump, c=float(value)))
        raise ConfigurationError(f"unknown sweep parameter {name!r}")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["x0"] = list(self.x0)
        out["grid"] = {"dt": out.pop("dt"), "t_final": out.pop("t_final")}
        if out["sweep"]["values"] is not None:
            out["sweep"]["values"] = list(out["sweep"]["values"])
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        try:
            kwargs = {}
            if "physical" in data:
                kwargs["physical"] = PhysicalParams(**data.pop("physical"))
            if "pump" in data:
                kwargs["pump"] = PumpProcess(**data.pop("pump"))
            if "grid" in data:
                kwargs.update(data.pop("grid"))
            if "sweep" in data:
                sweep = dict(data.pop("sweep"))
                if sweep.get("values") is not None:
                    sweep["values"] = tuple(sweep["values"])
                kwargs["sweep"] = SweepSpec(**sweep)
            if "x0" in data:
                kwargs["x0"] = tuple(data.pop("x0"))
            if data.get("initial_cov") is not None:
                kwargs["initial_cov"] = tuple(tuple(r) for r in data.pop("initial_cov"))
            kwargs.update(data)
            cfg = cls(**kwargs)
        except TypeError as exc:
            raise ConfigurationError(f"invalid configuration: {exc}") from exc
        for name in ("dt", "t_final", "burn_in", "pump_prior_var"):
            if not math.isfinite(getattr(cfg, name)):
                raise ConfigurationError(f"{name} must be finite")
        return cfg


def load_config(path) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError("config root must be a JSON object")
    return ExperimentConfig.from_dict(data)
