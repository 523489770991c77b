"""Application configuration using Pydantic settings."""

from functools import lru_cache
from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore"
    )

    # Application settings
    app_name: str = "lightcast"
    app_version: str = "1.0.0"
    environment: str = "development"

    # Logging
    log_level: str = "INFO"
    log_format: str = "json"  # json or text

    # Run defaults
    default_seed: int = 7
    horizon: int = 64
    cell_size: float = 0.5
    output_dir: str = "out"

    # Lamp controller link
    lamp_addr: str = "127.0.0.1:7878"
    lamp_connect_timeout: float = 5.0
    lamp_retry_attempts: int = 3

    # Training (plain SGD)
    learning_rate: float = 0.05
    epochs: int = 30
    batch: int = 32
    model_kind: str = "linear"  # linear or mlp
    hidden_units: int = 16

    # Forecasting
    forecast_samples: int = 200
    resample_points: int = 20
    k_values: list[int] = [20, 5]
    history_steps: int = 4

    # Pipeline simulation, ticks are simulated milliseconds
    frame_interval: int = 42
    forecast_stride: int = 12
    preempt_threshold: float = 0.6
    empty_timeout: int = 1000

    # Demonstration generation, lengths in cells; no upper bound by default
    demo_min_length: int = 10
    demo_max_length: Optional[int] = None


@lru_cache()
def get_settings() -> Settings:
    """
    Get cached settings instance.

    Using lru_cache ensures settings are only loaded once.
    """
    return Settings()
