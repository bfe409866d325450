"""Two-stage enzyme EC-number annotation over function-aware residue pooling."""

__version__ = "0.1.0"
