import os
import math
import logging
from typing import Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field, field_validator

# ------------------ Env + Constants ------------------
ENV_FILE = "conformal.env"
LOG_FORMAT = "[%(asctime)s] [%(levelname)s] %(message)s"
LOG_DATEFMT = "%Y-%m-%d %H:%M:%S"

DEFAULT_ENUMERATION_CAP = math.factorial(10)
DEFAULT_TABLE_CAP = 2 ** 20
ABS_TOL = 1e-12


class Settings(BaseModel):
    enumeration_cap: int = Field(DEFAULT_ENUMERATION_CAP, ge=1, description="Largest number of sequences an enumeration may visit")
    table_cap: int = Field(DEFAULT_TABLE_CAP, ge=1, description="Largest number of sequences tabulated for look-ups or file output")
    log_level: str = Field("INFO", description="Root log level")
    out_dir: str = Field("reports", description="Default directory for reports")

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v: str):
        v = v.upper()
        if v not in logging.getLevelNamesMapping():
            raise ValueError(f"Unknown log level '{v}'.")
        return v


_settings: Optional[Settings] = None


def get_settings() -> Settings:
    """Settings from the environment, pre-loaded from conformal.env when present."""
    global _settings
    if _settings is None:
        load_dotenv(ENV_FILE, override=False)
        _settings = Settings(
            enumeration_cap=int(os.getenv("CONFORMAL_ENUMERATION_CAP", DEFAULT_ENUMERATION_CAP)),
            table_cap=int(os.getenv("CONFORMAL_TABLE_CAP", DEFAULT_TABLE_CAP)),
            log_level=os.getenv("CONFORMAL_LOG_LEVEL", "INFO"),
            out_dir=os.getenv("CONFORMAL_OUT_DIR", "reports"),
        )
    return _settings


def reset_settings() -> None:
    global _settings
    _settings = None


def configure_logging(level: Optional[str] = None) -> None:
    logging.basicConfig(
        level=level or get_settings().log_level,
        format=LOG_FORMAT,
        datefmt=LOG_DATEFMT,
    )
