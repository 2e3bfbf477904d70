"""Process-level settings read from the environment or a ``.env`` file."""
from pathlib import Path
from typing import Optional

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings."""

    # Output settings
    OUTPUT_ROOT: Path = Field(default=Path("runs"), description="Root directory for run and matrix outputs")

    # Logging settings
    LOG_LEVEL: str = Field(default="INFO", description="Minimum level for the stderr log sink")
    LOG_FILE: Optional[Path] = Field(default=None, description="Extra log file written next to run logs")

    # Ablation settings
    WORKERS: int = Field(default=1, ge=1, description="Process pool size for ablation matrices")

    model_config = SettingsConfigDict(
        env_prefix="SSTE_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    @field_validator("LOG_LEVEL")
    @classmethod
    def normalize_level(cls, v: str) -> str:
        level = v.upper()
        if level not in {"TRACE", "DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"Unknown log level: {v}")
        return level


_settings: Optional[Settings] = None


def get_settings() -> Settings:
    """Get the application settings, creating them on first use."""
    global _settings
    if _settings is None:
        _settings = Settings()
    return _settings


def reset_settings() -> None:
    """Forget cached settings so the next call re-reads the environment."""
    global _settings
    _settings = None
