"""Bit storage with probe accounting and the on-disk container."""
