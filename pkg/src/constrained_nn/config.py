"""Run configurations: JSON-serializable dataclasses with path-precise validation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .problem import PRESETS


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _check_keys(raw: dict, allowed, path: str) -> None:
    if not isinstance(raw, dict):
        raise ConfigError(path, f"expected an object, got {type(raw).__name__}")
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}", f"unknown key (allowed: {sorted(allowed)})")


def _num(raw: dict, key: str, default, path: str, kind=float, lo=None, hi=None, lo_open=False):
    v = raw.get(key, default)
    p = f"{path}.{key}"
    if kind is int:
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(p, f"expected an integer, got {v!r}")
    elif isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(p, f"expected a number, got {v!r}")
    v = kind(v)
    if lo is not None and (v <= lo if lo_open else v < lo):
        raise ConfigError(p, f"must be {'>' if lo_open else '>='} {lo}, got {v}")
    if hi is not None and v > hi:
        raise ConfigError(p, f"must be <= {hi}, got {v}")
    return v


def _grid(raw: dict, key: str, default, path: str, kind=float, increasing=True):
    v = raw.get(key, default)
    p = f"{path}.{key}"
    if not isinstance(v, (list, tuple)) or not v:
        raise ConfigError(p, "expected a non-empty list")
    try:
        v = tuple(kind(x) for x in v)
    except (TypeError, ValueError):
        raise ConfigError(p, "list entries must be numbers") from None
    if increasing and any(b <= a for a, b in zip(v, v[1:])):
        raise ConfigError(p, "grid must be strictly increasing")
    return v


@dataclass
class DataConfig:
    synthetic: dict | None = None  # generate_biased_synthetic arguments
    csv: str | None = None
    schema: dict | None = None
    train_fraction: float | None = None
    split_seed: int = 0

    SYNTHETIC_KEYS = ("n", "d", "bias_gap", "seed", "noise", "separation")

    @classmethod
    def from_dict(cls, raw: dict, path: str = "data", base_dir: Path | None = None) -> "DataConfig":
        _check_keys(raw, {"synthetic", "csv", "schema", "train_fraction", "split_seed"}, path)
        synthetic, csv_path, schema = raw.get("synthetic"), raw.get("csv"), raw.get("schema")
        if (synthetic is None) == (csv_path is None):
            raise ConfigError(path, "give exactly one of 'synthetic' or 'csv'")
        if synthetic is not None:
            _check_keys(synthetic, cls.SYNTHETIC_KEYS, f"{path}.synthetic")
            sp = f"{path}.synthetic"
            synthetic = {
                "n": _num(synthetic, "n", 2000, sp, int, lo=40),
                "d": _num(synthetic, "d", 8, sp, int, lo=2),
                "bias_gap": _num(synthetic, "bias_gap", 0.8, sp, float, lo=0.0),
                "seed": _num(synthetic, "seed", 0, sp, int, lo=0),
                "noise": _num(synthetic, "noise", 0.7, sp, float, lo=0.0, lo_open=True),
                "separation": _num(synthetic, "separation", 1.0, sp, float),
            }
            if synthetic["bias_gap"] >= 1.0:
                raise ConfigError(f"{sp}.bias_gap", "must be < 1")
        else:
            if not isinstance(csv_path, str):
                raise ConfigError(f"{path}.csv", "expected a file path")
            if base_dir is not None and not Path(csv_path).is_absolute():
                csv_path = str((base_dir / csv_path).resolve())
            if not Path(csv_path).exists():
                raise ConfigError(f"{path}.csv", f"dataset file not found: {csv_path}")
            if not isinstance(schema, dict):
                raise ConfigError(f"{path}.schema", "csv data needs a schema object")
            for key in ("features", "label", "label_map"):
                if key not in schema:
                    raise ConfigError(f"{path}.schema.{key}", "missing required key")
            if "group" in schema and "group_map" not in schema:
                raise ConfigError(f"{path}.schema.group_map", "required when a group column is given")
        frac = raw.get("train_fraction")
        if frac is not None:
            frac = _num(raw, "train_fraction", None, path, float, lo=0.0, hi=1.0, lo_open=True)
            if frac >= 1.0:
                raise ConfigError(f"{path}.train_fraction", "must be < 1")
        return cls(synthetic=synthetic, csv=csv_path, schema=schema, train_fraction=frac,
                   split_seed=_num(raw, "split_seed", 0, path, int, lo=0))


@dataclass
class ModelConfig:
    m: int = 256
    seed: int = 0

    @classmethod
    def from_dict(cls, raw: dict, path: str = "model") -> "ModelConfig":
        _check_keys(raw, {"m", "seed"}, path)
        return cls(m=_num(raw, "m", 256, path, int, lo=1), seed=_num(raw, "seed", 0, path, int, lo=0))


@dataclass
class OptimizerConfig:
    T: int = 20000
    log_every: int = 100
    burn_in: int = 1000
    batch_size: int = 1
    seed: int = 0
    steps: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict, path: str = "optimizer") -> "OptimizerConfig":
        _check_keys(raw, {"T", "log_every", "burn_in", "batch_size", "seed", "steps"}, path)
        steps = raw.get("steps") or {}
        _check_keys(steps, {"theta", "xi", "lam"}, f"{path}.steps")
        for k in steps:
            _num(steps, k, None, f"{path}.steps", float, lo=0.0, lo_open=True)
        cfg = cls(T=_num(raw, "T", 20000, path, int, lo=1),
                  log_every=_num(raw, "log_every", 100, path, int, lo=1),
                  burn_in=_num(raw, "burn_in", 1000, path, int, lo=0),
                  batch_size=_num(raw, "batch_size", 1, path, int, lo=1),
                  seed=_num(raw, "seed", 0, path, int, lo=0),
                  steps={k: float(v) for k, v in steps.items()})
        if cfg.T // cfg.log_every * cfg.log_every <= cfg.burn_in:
            raise ConfigError(f"{path}.burn_in", "no logged iteration falls after burn_in, so no snapshot would be kept")
        return cfg


def _problem_dict(raw: dict, path: str = "problem") -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(path, "expected an object")
    preset = raw.get("preset")
    if preset is None and "objective" not in raw:
        raise ConfigError(path, "give a 'preset' or a full problem with 'objective'")
    if preset is not None and preset not in PRESETS:
        raise ConfigError(f"{path}.preset", f"unknown preset {preset!r}; expected one of {list(PRESETS)}")
    out = dict(raw)
    out["kappa"] = _num(raw, "kappa", 1.0, path, float, lo=0.0, lo_open=True)
    out["D"] = _num(raw, "D", 10.0, path, float, lo=0.0, lo_open=True)
    return out


@dataclass
class TrainConfig:
    data: DataConfig
    problem: dict
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    baseline: bool = True

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path | None = None, seed: int | None = None) -> "TrainConfig":
        _check_keys(raw, {"data", "problem", "model", "optimizer", "baseline", "kind"}, "config")
        if "data" not in raw:
            raise ConfigError("config.data", "missing required section")
        model = dict(raw.get("model", {}))
        opt = dict(raw.get("optimizer", {}))
        if seed is not None:
            model["seed"] = opt["seed"] = seed
        baseline = raw.get("baseline", True)
        if not isinstance(baseline, bool):
            raise ConfigError("config.baseline", "expected true or false")
        return cls(data=DataConfig.from_dict(raw["data"], "config.data", base_dir),
                   problem=_problem_dict(raw.get("problem", {"preset": "equal-opportunity"}), "config.problem"),
                   model=ModelConfig.from_dict(model, "config.model"),
                   optimizer=OptimizerConfig.from_dict(opt, "config.optimizer"),
                   baseline=baseline)

    def to_dict(self) -> dict:
        return {"kind": "train", **asdict(self)}


@dataclass
class LinearizationConfig:
    m_grid: tuple[int, ...] = (2**6, 2**8, 2**10, 2**12, 2**14)
    d: int = 16
    D: float = 1.0
    replicates: int = 2000
    x_per_init: int = 40
    D_sweep: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)
    D_sweep_m: int = 2**10
    output_m_grid: tuple[int, ...] = (2**6, 2**10, 2**14)
    output_threshold: float = 10.0
    slope_band: tuple[float, float] = (-0.8, -0.2)
    seed: int = 0

    @classmethod
    def from_dict(cls, raw: dict, seed: int | None = None) -> "LinearizationConfig":
        p = "config"
        _check_keys(raw, {f.name for f in fields(cls)} | {"kind"}, p)
        d = cls()
        band = _grid(raw, "slope_band", d.slope_band, p)
        if len(band) != 2:
            raise ConfigError(f"{p}.slope_band", "expected [low, high]")
        return cls(m_grid=_grid(raw, "m_grid", d.m_grid, p, int), d=_num(raw, "d", d.d, p, int, lo=3),
                   D=_num(raw, "D", d.D, p, float, lo=0.0, lo_open=True),
                   replicates=_num(raw, "replicates", d.replicates, p, int, lo=5),
                   x_per_init=_num(raw, "x_per_init", d.x_per_init, p, int, lo=1),
                   D_sweep=_grid(raw, "D_sweep", d.D_sweep, p),
                   D_sweep_m=_num(raw, "D_sweep_m", d.D_sweep_m, p, int, lo=1),
                   output_m_grid=_grid(raw, "output_m_grid", d.output_m_grid, p, int),
                   output_threshold=_num(raw, "output_threshold", d.output_threshold, p, float, lo=0.0, lo_open=True),
                   slope_band=band,
                   seed=seed if seed is not None else _num(raw, "seed", d.seed, p, int, lo=0))


@dataclass
class RegretConfig:
    T_grid: tuple[int, ...] = tuple(2**k for k in range(6, 14))
    seeds: int = 10
    dim: int = 5
    radius: float = 0.5
    center_norm: float = 0.2
    noise_radius: float = 0.2
    bias: float = 0.1
    plateau_from: int = 2**9
    plateau_ratio: float = 0.5
    slope_band: tuple[float, float] = (-0.65, -0.35)
    delta: float = 0.05
    seed: int = 0

    @classmethod
    def from_dict(cls, raw: dict, seed: int | None = None) -> "RegretConfig":
        p = "config"
        _check_keys(raw, {f.name for f in fields(cls)} | {"kind"}, p)
        d = cls()
        return cls(T_grid=_grid(raw, "T_grid", d.T_grid, p, int),
                   seeds=_num(raw, "seeds", d.seeds, p, int, lo=1), dim=_num(raw, "dim", d.dim, p, int, lo=1),
                   radius=_num(raw, "radius", d.radius, p, float, lo=0.0, lo_open=True),
                   center_norm=_num(raw, "center_norm", d.center_norm, p, float, lo=0.0),
                   noise_radius=_num(raw, "noise_radius", d.noise_radius, p, float, lo=0.0),
                   bias=_num(raw, "bias", d.bias, p, float, lo=0.0),
                   plateau_from=_num(raw, "plateau_from", d.plateau_from, p, int, lo=1),
                   plateau_ratio=_num(raw, "plateau_ratio", d.plateau_ratio, p, float, lo=0.0),
                   slope_band=_grid(raw, "slope_band", d.slope_band, p),
                   delta=_num(raw, "delta", d.delta, p, float, lo=0.0, hi=1.0, lo_open=True),
                   seed=seed if seed is not None else _num(raw, "seed", d.seed, p, int, lo=0))


@dataclass
class BoundConfig:
    train: TrainConfig
    kappas: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)
    seeds: tuple[int, ...] = (0, 1, 2)

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path | None = None, seed: int | None = None) -> "BoundConfig":
        _check_keys(raw, {"train", "kappas", "seeds", "kind"}, "config")
        train_raw = dict(raw.get("train") or default_train_dict())
        train_raw["baseline"] = False
        seeds = _grid(raw, "seeds", (0, 1, 2), "config", int) if seed is None else (seed,)
        return cls(train=TrainConfig.from_dict(train_raw, base_dir),
                   kappas=_grid(raw, "kappas", (0.5, 1.0, 2.0, 4.0), "config"), seeds=seeds)


def default_train_dict() -> dict:
    """The equal-opportunity setup on the biased synthetic data."""
    return {
        "data": {"synthetic": {"n": 2000, "d": 8, "bias_gap": 0.8, "seed": 0}},
        "problem": {"preset": "equal-opportunity", "kappa": 1.0, "D": 10.0},
        "model": {"m": 256, "seed": 0},
        "optimizer": {"T": 20000, "log_every": 100, "burn_in": 1000, "seed": 0},
        "baseline": True,
    }


def load_json(path) -> dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(str(path), "config file not found")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON: {exc}") from None
