"""Tests for process settings."""

from synergyseg.config import Settings, get_settings


def test_defaults(test_settings):
    """Test the shipped defaults."""
    assert test_settings.DEVICE == "cpu"
    assert test_settings.DEFAULT_BUDGET_GB == 8.0
    assert test_settings.CODEBOOK_SIZE == 256
    assert test_settings.LATENT_DIM % test_settings.ATTENTION_HEADS == 0


def test_environment_overrides(monkeypatch):
    """Test SYNERGYSEG_ prefixed variables override defaults."""
    monkeypatch.setenv("SYNERGYSEG_CODEBOOK_SIZE", "32")
    monkeypatch.setenv("SYNERGYSEG_DETERMINISTIC", "false")
    settings = Settings(_env_file=None)
    assert settings.CODEBOOK_SIZE == 32
    assert settings.DETERMINISTIC is False


def test_settings_are_cached():
    """Test get_settings returns one shared instance."""
    assert get_settings() is get_settings()
