"""Configuration management for ls-sweep."""

import json
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml
from dotenv import find_dotenv, load_dotenv

from .problem import DOWNWARD, GridSpec, VelocitySpec, make_grid, parse_velocity_spec
from .solver import SolverConfig
from .stencil_eval import SCHEMES


def _check_keys(section: str, data: dict[str, Any], allowed: set[str]) -> None:
    unknown = set(data) - allowed
    if unknown:
        raise ValueError(f"Unknown keys in '{section}': {sorted(unknown)}")


def _keys(cls: type) -> set[str]:
    return {f.name for f in fields(cls)}


def _optional_float(value: Any) -> float | None:
    return None if value is None else float(value)


@dataclass
class GridConfig:
    """Grid parameters; omega = 2 pi * omega_over_2pi."""

    omega_over_2pi: float = 16.0
    ppw: float = 8.0
    b: int = 8
    c_pml: float = 10.0

    @property
    def omega(self) -> float:
        return 2 * math.pi * self.omega_over_2pi

    def to_grid(self) -> GridSpec:
        return make_grid(self.omega, self.ppw, self.b, self.c_pml)


@dataclass
class StencilEvalConfig:
    """Scheme comparison against the analytic Green's function."""

    schemes: list[str] = field(default_factory=lambda: ["sparsify", "qsfem"])
    ppw: list[float] = field(default_factory=lambda: [3.0, 4.0, 5.0])
    depth_factor: int = 2
    strength_factor: float = 2.0
    # interior alpha is fitted on the kernel window of a domain this many wavelengths wide
    fit_waves: float | None = 1024.0


@dataclass
class CalibrationConfig:
    """PML strength sweep."""

    c_values: list[float] = field(default_factory=lambda: [5.0, 10.0, 15.0, 20.0])
    b_values: list[int] = field(default_factory=lambda: [4, 8])
    band: int = 2


@dataclass
class RunConfig:
    """Main run configuration."""

    grid: GridConfig = field(default_factory=GridConfig)
    velocity: VelocitySpec = field(default_factory=VelocitySpec)
    direction: tuple[float, float] = DOWNWARD
    solver: SolverConfig = field(default_factory=SolverConfig)
    stencil_eval: StencilEvalConfig = field(default_factory=StencilEvalConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    out: Path = field(default_factory=lambda: Path("out"))
    threads: int = 1
    seed: int = 0


_TOP_LEVEL = {
    "grid",
    "velocity",
    "incoming",
    "solver",
    "stencil_eval",
    "calibration",
    "out",
    "threads",
    "seed",
}


def _load_velocity(raw: Any) -> VelocitySpec:
    """Inline mapping, or 'file:PATH' naming a JSON document."""
    if raw is None:
        return VelocitySpec()
    if isinstance(raw, str):
        if not raw.startswith("file:"):
            raise ValueError(f"velocity must be a mapping or 'file:PATH', got '{raw}'")
        path = Path(raw[5:])
        if not path.exists():
            raise FileNotFoundError(f"Velocity file not found: {path}")
        raw = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ValueError(f"velocity must be a mapping, got {type(raw).__name__}")
    return parse_velocity_spec(raw)


def _parse_grid(data: dict[str, Any]) -> GridConfig:
    _check_keys("grid", data, _keys(GridConfig))
    defaults = GridConfig()
    return GridConfig(
        omega_over_2pi=float(data.get("omega_over_2pi", defaults.omega_over_2pi)),
        ppw=float(data.get("ppw", defaults.ppw)),
        b=int(data.get("b", defaults.b)),
        c_pml=float(data.get("c_pml", defaults.c_pml)),
    )


def _parse_solver(data: dict[str, Any]) -> SolverConfig:
    _check_keys("solver", data, _keys(SolverConfig))
    defaults = SolverConfig()
    return SolverConfig(
        tol=float(data.get("tol", defaults.tol)),
        restart=int(data.get("restart", defaults.restart)),
        maxit=int(data.get("maxit", defaults.maxit)),
        side=str(data.get("side", defaults.side)),
    )


def _parse_stencil_eval(data: dict[str, Any]) -> StencilEvalConfig:
    _check_keys("stencil_eval", data, _keys(StencilEvalConfig))
    defaults = StencilEvalConfig()
    cfg = StencilEvalConfig(
        schemes=[str(s) for s in data.get("schemes", defaults.schemes)],
        ppw=[float(p) for p in data.get("ppw", defaults.ppw)],
        depth_factor=int(data.get("depth_factor", defaults.depth_factor)),
        strength_factor=float(data.get("strength_factor", defaults.strength_factor)),
        fit_waves=_optional_float(data.get("fit_waves", defaults.fit_waves)),
    )
    for scheme in cfg.schemes:
        if scheme not in SCHEMES:
            raise ValueError(f"Unknown scheme '{scheme}', expected one of {SCHEMES}")
    if cfg.depth_factor < 1 or cfg.strength_factor <= 0:
        raise ValueError("depth_factor must be >= 1 and strength_factor > 0")
    if cfg.fit_waves is not None and cfg.fit_waves <= 0:
        raise ValueError(f"fit_waves must be positive or null, got {cfg.fit_waves}")
    return cfg


def _parse_calibration(data: dict[str, Any]) -> CalibrationConfig:
    _check_keys("calibration", data, _keys(CalibrationConfig))
    defaults = CalibrationConfig()
    cfg = CalibrationConfig(
        c_values=[float(c) for c in data.get("c_values", defaults.c_values)],
        b_values=[int(b) for b in data.get("b_values", defaults.b_values)],
        band=int(data.get("band", defaults.band)),
    )
    if not cfg.c_values or any(c < 0 for c in cfg.c_values):
        raise ValueError(f"c_values must be non-empty and non-negative, got {cfg.c_values}")
    return cfg


def _parse_direction(data: dict[str, Any]) -> tuple[float, float]:
    _check_keys("incoming", data, {"direction"})
    r1, r2 = (float(v) for v in data.get("direction", DOWNWARD))
    if abs(math.hypot(r1, r2) - 1.0) > 1e-12:
        raise ValueError(f"incoming direction must be a unit vector, got ({r1}, {r2})")
    return (r1, r2)


def load_config(
    config_path: str | None = None, overrides: dict[str, Any] | None = None
) -> RunConfig:
    """Load configuration from a YAML file, CLI overrides and environment variables.

    Precedence, lowest first: defaults, file, overrides, LS_SWEEP_THREADS.
    """
    load_dotenv(find_dotenv(usecwd=True))

    data: dict[str, Any] = {}
    if config_path is not None:
        config_file = Path(config_path)
        if not config_file.exists():
            raise FileNotFoundError(
                f"Config file not found: {config_path}. "
                "Copy config.example.yaml to config.yaml and adjust the settings."
            )
        with open(config_file, encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    _check_keys("<top>", data, _TOP_LEVEL)

    grid = _parse_grid(data.get("grid") or {})
    cfg = RunConfig(
        grid=grid,
        velocity=_load_velocity(data.get("velocity")),
        direction=_parse_direction(data.get("incoming") or {}),
        solver=_parse_solver(data.get("solver") or {}),
        stencil_eval=_parse_stencil_eval(data.get("stencil_eval") or {}),
        calibration=_parse_calibration(data.get("calibration") or {}),
        out=Path(data.get("out", "out")),
        threads=int(data.get("threads", 1)),
        seed=int(data.get("seed", 0)),
    )

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in _keys(GridConfig):
            setattr(cfg.grid, key, type(getattr(cfg.grid, key))(value))
        elif key == "out":
            cfg.out = Path(value)
        elif key in ("threads", "seed"):
            setattr(cfg, key, int(value))
        else:
            raise ValueError(f"Unknown override: {key}")

    env_threads = os.getenv("LS_SWEEP_THREADS")
    if env_threads:
        cfg.threads = int(env_threads)
    if cfg.threads < 1:
        raise ValueError(f"threads must be >= 1, got {cfg.threads}")

    # fails fast on grids that cannot hold the slice partition
    cfg.grid.to_grid()
    return cfg
