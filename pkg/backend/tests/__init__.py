"""Tests for synergyseg."""
