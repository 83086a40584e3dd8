"""Experiment configuration: flat key = value text with bracketed matrix rows.

Example::

    plant = batch_reactor
    T = 20
    alpha_t = 1e-4
    sigma_s = 10
    lambda = [[1.2]]
    y2_max = [1.0954451150103321]
    r1 = 1
    r2 = 1
    x0 = [1, -0.65, 0.4, -0.1]
    N = 60
    seed = 0
    out_dir = out

``plant`` is either the built-in name ``batch_reactor`` or a path (relative
to the config file) to a plant file holding keys A, B, E, C1, D1, E1, C2,
D2 in the same format.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .linsys import LtiSystem, batch_reactor
from .synthesis import DesignConfig

__all__ = ["ExperimentConfig", "ConfigError", "parse_config", "parse_plant_file"]


class ConfigError(ValueError):
    pass


def _parse_flat(path: Path) -> dict:
    values = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        try:
            values[key] = ast.literal_eval(val)
        except (ValueError, SyntaxError):
            values[key] = val
    return values


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment needs; numeric fields mirror DesignConfig."""

    plant: str = "batch_reactor"
    T: int = 20
    alpha_t: float = 1e-4
    sigma_s: float = 10.0
    Lambda: np.ndarray = field(default_factory=lambda: 1.2 * np.eye(1))
    y2_max: np.ndarray = field(default_factory=lambda: np.array([np.sqrt(1.2)]))
    r1: float = 1.0
    r2: float = 1.0
    eps_strict: float = 1e-8
    eta_growth: float = 1.1
    max_inflations: int = 50
    x0: np.ndarray = field(default_factory=lambda: np.array([1.0, -0.65, 0.4, -0.1]))
    N: int = 60
    seed: int = 0
    out_dir: str = "out"
    base_dir: Path = field(default_factory=Path)

    def design_config(self) -> DesignConfig:
        try:
            return DesignConfig(sigma_s=self.sigma_s, Lambda=self.Lambda,
                                y2_max=self.y2_max, r1=self.r1, r2=self.r2,
                                eps_strict=self.eps_strict, eta_growth=self.eta_growth,
                                max_inflations=self.max_inflations)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def load_plant(self) -> LtiSystem:
        if self.plant == "batch_reactor":
            return batch_reactor()
        path = (self.base_dir / self.plant).resolve()
        if not path.exists():
            raise ConfigError(f"plant file not found: {path}")
        return parse_plant_file(path)

    def seeds(self) -> tuple[np.random.SeedSequence, np.random.SeedSequence]:
        """Independent streams for data collection and the closed-loop run."""
        collect_ss, run_ss = np.random.SeedSequence(self.seed).spawn(2)
        return collect_ss, run_ss


def parse_plant_file(path) -> LtiSystem:
    vals = _parse_flat(Path(path))
    missing = {"A", "B", "E", "C1", "D1", "E1", "C2", "D2"} - set(vals)
    if missing:
        raise ConfigError(f"{path}: plant file is missing keys {sorted(missing)}")
    try:
        return LtiSystem(**{k: np.array(vals[k], dtype=float)
                            for k in ("A", "B", "E", "C1", "D1", "E1", "C2", "D2")})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


_FIELD_TYPES = {
    "plant": str, "T": int, "alpha_t": float, "sigma_s": float,
    "r1": float, "r2": float, "eps_strict": float, "eta_growth": float,
    "max_inflations": int, "N": int, "seed": int, "out_dir": str,
}
_ARRAY_FIELDS = {"lambda": "Lambda", "y2_max": "y2_max", "x0": "x0"}


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    vals = _parse_flat(path)
    kwargs = {"base_dir": path.parent}
    for key, val in vals.items():
        if key in _FIELD_TYPES:
            try:
                kwargs[key] = _FIELD_TYPES[key](val)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{path}: bad value for {key}: {val!r}") from exc
        elif key in _ARRAY_FIELDS:
            try:
                kwargs[_ARRAY_FIELDS[key]] = np.array(val, dtype=float)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{path}: bad matrix literal for {key}: {val!r}") from exc
        else:
            raise ConfigError(f"{path}: unknown key {key!r}")
    cfg = ExperimentConfig(**kwargs)
    if cfg.T < 1 or cfg.N < 0 or cfg.alpha_t < 0:
        raise ConfigError(f"{path}: T must be >= 1, N >= 0, alpha_t >= 0")
    cfg.design_config()  # validate the design fields eagerly
    return cfg
