"""
Application configuration using Pydantic Settings
"""
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

from app import __version__


class Settings(BaseSettings):
    """Numerical defaults and runtime options loaded from environment variables"""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="CPRSTAB_",
        case_sensitive=False,
        extra="ignore"
    )

    # Application
    app_name: str = "cprstab"
    app_version: str = __version__
    debug: bool = False
    log_level: str = "INFO"
    log_dir: str = ""  # empty disables file logging

    # Density evolution
    de_tol: float = Field(default=1e-12, gt=0)
    de_max_iter: int = Field(default=10_000, ge=1)
    reference_max_iter: int = 500  # iteration cap under --reference
    reference_rounding: bool = False  # round success probability above 0.99999 up to 1

    # Stability classification
    stable_tol: float = 1e-9
    equal_tol: float = 1e-7
    strict_weak_samples: int = 16
    threshold_tol: float = 1e-4

    # Receiver models
    rayleigh_tail_mass: float = 1e-12
    monotonicity_warn_tol: float = 1e-9

    # Region mapping
    region_step: float = 0.001
    region_coarse_step: float = 0.01
    region_max_cells: int = 2_000_000
    region_chunk_size: int = 4096

    # Monte Carlo
    poisson_user_counts: bool = False
    sim_max_iter: int = 500

    # Runtime
    workers: int = 0  # 0 = one per physical core
    output_dir: str = "output"


# Global settings instance
settings = Settings()
