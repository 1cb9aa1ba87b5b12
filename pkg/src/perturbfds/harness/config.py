"""Experiment configuration: loading, defaults and validation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import yaml

from ..errors import ConfigError

TAGS = ("laplace-reshape-fixed-cut", "laplace-reshape-growing-cut", "laplace-refine",
        "helmholtz-refine")
CURVES = ("circle", "ellipse", "star", "sunflower", "squircle")


@dataclass
class ExperimentConfig:
    """One sweep of a perturbation experiment.

    ``n_panels`` is the sweep over original discretizations (``N_o = 16 *
    n_panels``); refinement experiments additionally sweep ``factors``.
    Reshape experiments cut ``cut_panels`` panels (``cut_fraction`` of the
    curve when set) centred at ``cut_center`` and insert a bump of
    ``bump_height`` (times the cut's parameter width when
    ``bump_relative``) discretized with ``n_new_panels`` panels.
    """

    experiment: str
    seed: int
    curve: str = "sunflower"
    curve_params: dict = field(default_factory=dict)
    n_panels: list = field(default_factory=lambda: [400])
    p: int = 16
    omega: float = 0.0
    eps: float = 1e-10
    # refinement
    refine_panels: int = 3
    factors: list = field(default_factory=lambda: [2])
    # reshape
    cut_panels: int = 1
    cut_fraction: Optional[float] = None
    cut_center: float = 1.5707963267948966
    bump_height: float = 0.05
    bump_relative: bool = False
    bump_order: int = 8
    n_new_panels: int = 56
    # solvers
    formulations: list = field(default_factory=lambda: ["new", "orig"])
    leaf_size: int = 64
    proxy_ratio: float = 1.75
    dense_cutoff: int = 1024
    # measurement
    repeats: int = 5
    warmup: bool = True
    solve_repeats: int = 5
    n_test_points: int = 20
    oracle_max_n: int = 2048
    error_tol: float = 1e-7
    oracle_tol: float = 1e-8
    output: str = "results"

    @property
    def tag(self) -> str:
        return self.experiment

    @property
    def is_helmholtz(self) -> bool:
        return self.experiment.startswith("helmholtz")

    @property
    def is_refinement(self) -> bool:
        return self.experiment.endswith("refine")

    def validate(self) -> "ExperimentConfig":
        if self.experiment not in TAGS:
            raise ConfigError(f"unknown experiment tag {self.experiment!r}; expected one of {TAGS}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("seed is mandatory and must be an integer")
        if self.curve not in CURVES:
            raise ConfigError(f"unknown curve {self.curve!r}")
        for name in ("n_panels", "factors"):
            vals = getattr(self, name)
            if not isinstance(vals, list) or not vals:
                raise ConfigError(f"{name} must be a non-empty list")
            if any(not isinstance(v, int) for v in vals):
                raise ConfigError(f"{name} entries must be integers")
            if vals != sorted(vals):
                raise ConfigError(f"{name} must be sorted ascending")
        if min(self.n_panels) < 2:
            raise ConfigError("n_panels entries must be at least 2")
        if self.is_refinement and min(self.factors) < 2:
            raise ConfigError("refinement factors must be at least 2")
        if self.is_helmholtz and not self.omega > 0:
            raise ConfigError("helmholtz experiments need omega > 0")
        if self.p not in (8, 16):
            raise ConfigError("p must be 8 or 16")
        if not 0 < self.eps < 1:
            raise ConfigError("eps must lie in (0, 1)")
        if self.repeats < 1 or self.solve_repeats < 1:
            raise ConfigError("repeat counts must be positive")
        bad = set(self.formulations) - {"new", "orig"}
        if bad or "new" not in self.formulations:
            raise ConfigError("formulations must include 'new' and may include 'orig'")
        if self.cut_fraction is not None and not 0 < self.cut_fraction < 1:
            raise ConfigError("cut_fraction must lie in (0, 1)")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def config_from_dict(data: dict, **overrides) -> ExperimentConfig:
    data = dict(data)
    data.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "experiment" not in data:
        raise ConfigError("config needs an 'experiment' tag")
    if "seed" not in data:
        raise ConfigError("config needs a 'seed'")
    return ExperimentConfig(**data).validate()


def load_config(path, **overrides) -> ExperimentConfig:
    """Read a YAML or JSON experiment file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must contain a mapping")
    return config_from_dict(data, **overrides)
