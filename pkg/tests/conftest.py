import numpy as np
import pytest

from conformal_efficiency.core import ExampleSpace
from conformal_efficiency.settings import reset_settings


@pytest.fixture(autouse=True)
def fresh_settings(monkeypatch, tmp_path):
    """Every test starts from default settings with reports under tmp_path."""
    for key in ("CONFORMAL_ENUMERATION_CAP", "CONFORMAL_TABLE_CAP", "CONFORMAL_LOG_LEVEL"):
        monkeypatch.delenv(key, raising=False)
    monkeypatch.setenv("CONFORMAL_OUT_DIR", str(tmp_path / "reports"))
    reset_settings()
    yield
    reset_settings()


@pytest.fixture
def binary():
    return ExampleSpace.binary()


@pytest.fixture
def ternary():
    return ExampleSpace.with_labels(("0", "1", "2"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
