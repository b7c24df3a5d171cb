"""Packaged data files (wire-protocol conformance fixture)."""
