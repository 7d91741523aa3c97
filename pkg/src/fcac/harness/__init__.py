"""Manifests, the session protocol, metrics, synthetic data, reports and the CLI."""
