"""Tests for Disent Toolkit."""
