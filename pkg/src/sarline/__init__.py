"""sarline: structure-activity relationship extraction from document bundles."""

__version__ = "0.1.0"
