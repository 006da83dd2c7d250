"""Network tests."""
