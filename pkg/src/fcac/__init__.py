"""Few-shot class-incremental audio classification with a prototype adaptation network."""

__version__ = "0.1.0"
