"""Locally decodable and locally updatable compression toolkit."""
