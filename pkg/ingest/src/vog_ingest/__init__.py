"""Converter from ScanNet-style scene exports to vog scene bundles.

The contract with the grounding engine is the ``scene.json`` file format,
not shared code: this package writes bundles the engine's loader accepts.
"""

from .convert import IngestConfig, IngestError, MalformedInput, MissingInput, ingest

__all__ = ["IngestConfig", "IngestError", "MalformedInput", "MissingInput", "ingest"]

__version__ = "0.1.0"
