"""bftrange: a deterministic desk-scale BFT cyber range with an operational twin."""

__version__ = "0.1.0"
