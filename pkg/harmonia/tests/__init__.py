"""Test suite for harmonia."""
