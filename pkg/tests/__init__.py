"""Tests for kkl_tune package."""
