"""Tests for ephemap."""
