"""Application configuration."""

from functools import lru_cache

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-level settings, read from the environment or a `.env` file."""

    model_config = SettingsConfigDict(
        env_file=".env", env_file_encoding="utf-8", env_prefix="SYNERGYSEG_", extra="ignore"
    )

    # Application
    DEBUG: bool = False
    LOG_LEVEL: str = "INFO"

    # Compute
    DEVICE: str = "cpu"
    TORCH_THREADS: int = 1
    DETERMINISTIC: bool = True

    # Planning
    DEFAULT_BUDGET_GB: float = 8.0
    BUDGET_SAFETY_FACTOR: float = 0.9

    # Synergy bottleneck
    CODEBOOK_SIZE: int = 256
    LATENT_DIM: int = 64
    ATTENTION_HEADS: int = 4
    COMMITMENT_BETA: float = 0.25
    CODEBOOK_DECAY: float = 0.99


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()
