"""Ingestion daemon and HTTP API."""
from .daemon import (DEFAULT_FILTER, DEFAULT_HTTP_PORT, INTERNAL, MALFORMED, STORE_REJECTED, TOKEN_ENV,
                     ConfigError,
                     IngestConfig, IngestHandle, Ingestor, IngestStats, ingest_loop)
from .http import ApiServer, http_serve

__all__ = [
    "DEFAULT_FILTER", "DEFAULT_HTTP_PORT", "INTERNAL", "MALFORMED", "STORE_REJECTED", "TOKEN_ENV",
    "ConfigError",
    "IngestConfig", "IngestHandle", "Ingestor", "IngestStats", "ingest_loop",
    "ApiServer", "http_serve",
]
