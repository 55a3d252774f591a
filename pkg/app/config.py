#config.py
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import List, Optional, Union

import yaml
from dotenv import load_dotenv

from app.core.errors import ConfigError
from app.core.simworld import MODES, PopulationConfig

load_dotenv()

DEFAULT_MODELS = ["Dummy", "AvgSkill", "Linear", "RandomForest", "MlpRegressor", "Logistic", "MlpSoftmax"]


@dataclass
class Settings:
    """ settings loader"""
    env: str = os.getenv("ENV", "dev")

    database_url: str = os.getenv("DATABASE_URL")
    db_user: str = os.getenv("DB_USER")
    db_pass: str = os.getenv("DB_PASSWORD")
    db_name: str = os.getenv("DB_NAME")
    db_host: str = os.getenv("DB_HOST", "localhost")
    db_port: str = os.getenv("DB_PORT", "5433")
    db_echo: bool = os.getenv("DB_ECHO", "0") == "1"

    max_parallel_workers: int = int(os.getenv("MAX_WORKERS", "4"))
    log_level: str = os.getenv("LOG_LEVEL", "INFO")

    reports_dir: str = os.getenv("REPORTS_DIR", "reports")
    data_dir: str = os.getenv("DATA_DIR", "data")

    def get_db_url(self):
        if self.database_url:
            return self.database_url
        if self.db_name:
            return f"postgresql+psycopg2://{self.db_user}:{self.db_pass}@{self.db_host}:{self.db_port}/{self.db_name}"
        return f"sqlite:///{Path(self.data_dir) / 'balance.db'}"

    @property
    def is_sqlite(self) -> bool:
        return self.get_db_url().startswith("sqlite")


settings = Settings()


@dataclass
class RunConfig:
    """Pipeline run settings. Precedence: defaults < YAML file < command-line flags."""

    seed: int = 7
    mode: str = "3v3"
    days: int = 90
    matches_per_day: int = 250
    num_players: int = 3000
    theta: float = 3.0
    omega: float = 0.3
    gate_theta: float = 1.0
    gate_omega: float = 0.1
    k_days: int = 30
    max_windows: Optional[int] = None
    models: List[str] = field(default_factory=lambda: list(DEFAULT_MODELS))
    best_subset: bool = False
    keep_k: int = 20
    r_max: float = 0.95
    tune_omega: bool = False
    forest_depths: List[int] = field(default_factory=list)
    symmetrize: bool = False
    forest: dict = field(default_factory=dict)
    mlp: dict = field(default_factory=dict)
    population: dict = field(default_factory=dict)
    out: str = "runs"

    def __post_init__(self):
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        if isinstance(self.models, str):
            self.models = [m.strip() for m in self.models.split(",") if m.strip()]
        if not self.models:
            raise ConfigError("at least one model is required")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}, expected one of {sorted(MODES)}")
        if not self.theta > 0:
            raise ConfigError(f"theta must be positive, got {self.theta}")
        if not 0 < self.omega <= 0.5:
            raise ConfigError(f"omega must lie in (0, 0.5], got {self.omega}")
        if not self.gate_theta > 0 or not 0 < self.gate_omega <= 0.5:
            raise ConfigError(f"invalid gate thresholds theta={self.gate_theta}, omega={self.gate_omega}")
        if self.k_days < 4:
            raise ConfigError(f"k_days must be at least 4, got {self.k_days}")

    def population_config(self) -> PopulationConfig:
        return PopulationConfig.for_mode(
            self.mode,
            num_players=self.num_players,
            days=self.days,
            matches_per_day=self.matches_per_day,
            seed=self.seed,
            **self.population,
        )

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    @classmethod
    def load(cls, path: Union[str, Path, None] = None, **overrides) -> "RunConfig":
        values = {}
        if path is not None:
            path = Path(path)
            if not path.exists():
                raise FileNotFoundError(f"config file {path} does not exist")
            loaded = yaml.safe_load(path.read_text()) or {}
            if not isinstance(loaded, dict):
                raise ConfigError(f"{path}: expected a mapping at the top level")
            values.update({k.replace("-", "_"): v for k, v in loaded.items()})
        values.update({k: v for k, v in overrides.items() if v is not None})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        try:
            return cls(**values)
        except TypeError as e:
            raise ConfigError(str(e)) from e
