"""Compression schemes: multilevel, block variable-length and the naive baseline."""
