"""Detector plugins honoring the manifest-in / results-JSON-out contract."""
