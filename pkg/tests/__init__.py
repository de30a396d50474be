"""Tests for the GCSAM toolkit."""
