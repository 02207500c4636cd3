"""Neural audio bandwidth extension with filter-generalization experiments."""

__version__ = "0.1.0"
