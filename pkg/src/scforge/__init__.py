"""scforge: build, annotate, judge, and evaluate smart-contract vulnerability datasets."""

__version__ = "0.1.0"
