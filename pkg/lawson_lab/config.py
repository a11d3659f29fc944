import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

from dotenv import dotenv_values, load_dotenv

from .errors import ConfigError

load_dotenv()

DATABASE_URL = os.getenv("LAWSON_LAB_DATABASE_URL", "sqlite:///./lawson_lab.db")
LOG_LEVEL = os.getenv("LAWSON_LAB_LOG_LEVEL", "INFO").upper()


def thread_cap() -> int:
    try:
        return max(1, int(os.getenv("LAWSON_LAB_THREADS", "4")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class Settings:
    # Grids
    grid: int = 256
    spectrum_grid: int = 192
    spectrum_coarse_grid: int = 96
    spectrum_count: int = 12
    revolution_n_v: int = 512
    revolution_modes: int = 6
    takahashi_grids: str = "128,256"
    extremality_grid: int = 48
    detect_grid: int = 32
    # Tolerances
    eigen_tol: float = 1e-9
    cluster_rel_tol: float = 5e-3
    rank_tol: float = 1e-9
    balance_tol: float = 1e-9
    stereo_clearance: float = 0.3
    # Sampling
    seed: int = 20240101
    mobius_samples: int = 200
    extremality_directions: int = 20
    extremality_t_max: float = 1e-2
    deformation_harmonics: int = 3

    @classmethod
    def from_mapping(cls, values: Mapping[str, Optional[str]]) -> "Settings":
        known = {f.name: f for f in fields(cls)}
        defaults = cls()
        overrides: Dict[str, Any] = {}
        for raw_key, raw_value in values.items():
            key = raw_key.strip().lower()
            if key not in known:
                raise ConfigError(f"Unknown config key {raw_key!r}. Valid: {sorted(known)}")
            if raw_value is None:
                raise ConfigError(f"Config key {raw_key!r} has no value.")
            kind = type(getattr(defaults, key))
            try:
                overrides[key] = kind(raw_value.strip())
            except ValueError as exc:
                raise ConfigError(f"Config key {raw_key!r}: cannot read {raw_value!r} as {kind.__name__}") from exc
        return dataclasses.replace(defaults, **overrides)

    @classmethod
    def from_file(cls, path: Union[str, Path, None]) -> "Settings":
        if path is None:
            return cls()
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"Config file not found: {path}")
        return cls.from_mapping(dotenv_values(path))

    def takahashi_levels(self) -> list:
        return [int(tok) for tok in self.takahashi_grids.split(",") if tok.strip()]

    def as_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)
