import logging

from pydantic import AliasChoices, Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


_LOG_LEVELS = ("CRITICAL", "ERROR", "WARNING", "INFO", "DEBUG")


def _validate_redis_url(url: str | None) -> str | None:
    if url is None or url.strip() == "":
        return None
    url = url.strip()
    if not (url.startswith("redis://") or url.startswith("rediss://")):
        raise RuntimeError(
            "Invalid REDIS_URL. Expected a Redis URL starting with 'redis://' or 'rediss://'."
        )
    return url


def _validate_log_level(value: str) -> str:
    level = value.strip().upper()
    if level not in _LOG_LEVELS:
        raise RuntimeError(
            "Invalid MBQ_LOG_LEVEL. Expected one of: " + ", ".join(_LOG_LEVELS) + "."
        )
    return level


class Settings(BaseSettings):
    """Process-level settings read from the environment and an optional .env file."""

    model_config = SettingsConfigDict(env_prefix="MBQ_", env_file=".env", extra="ignore")

    seed_base: int = 0
    log_level: str = "INFO"
    redis_url: str | None = Field(
        default=None,
        validation_alias=AliasChoices("REDIS_URL", "MBQ_REDIS_URL"),
    )

    @field_validator("redis_url", mode="before")
    @classmethod
    def _check_redis_url(cls, value: str | None) -> str | None:
        return _validate_redis_url(value)

    @field_validator("log_level")
    @classmethod
    def _check_log_level(cls, value: str) -> str:
        return _validate_log_level(value)

    @property
    def logging_level(self) -> int:
        return getattr(logging, self.log_level)


def load_settings() -> Settings:
    """Read settings fresh from the current environment."""
    return Settings()
