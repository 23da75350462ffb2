"""Pytest configuration."""
import pytest
import sys
from pathlib import Path

src_path = Path(__file__).parent.parent / "src"
sys.path.insert(0, str(src_path))
sys.path.insert(0, str(Path(__file__).parent))

from fixtures.sample_data import (  # noqa: E402
    identity_model,
    tiny_arch,
    tiny_conv_arch,
    tiny_dataset,
    tiny_params,
    tiny_settings,
)


@pytest.fixture(autouse=True)
def _isolated_env(monkeypatch, tmp_path):
    """Keep THAT_* variables and a stray .env out of every test."""
    import os
    for key in list(os.environ):
        if key.startswith("THAT_"):
            monkeypatch.delenv(key)
    monkeypatch.chdir(tmp_path)


@pytest.fixture
def arch():
    return tiny_arch()


@pytest.fixture
def conv_arch():
    return tiny_conv_arch()


@pytest.fixture
def params(arch):
    return tiny_params(arch)


@pytest.fixture
def conv_params(conv_arch):
    return tiny_params(conv_arch)


@pytest.fixture
def settings(tmp_path):
    return tiny_settings(tmp_path)


@pytest.fixture
def dataset(settings):
    return tiny_dataset(settings)


@pytest.fixture
def memorized():
    return identity_model()
