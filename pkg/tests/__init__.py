"""Tests for archetype_match."""
