"""Monte Carlo locality benchmarks."""
