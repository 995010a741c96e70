"""debias-sidecar: inference service for the debias-forge /v1 wire protocol."""

__version__ = "0.1.0"
