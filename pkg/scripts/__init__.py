"""Setup checks and benchmark campaign scripts."""
