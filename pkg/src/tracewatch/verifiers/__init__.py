"""Symbolic verifiers for maze, spatial-map and Game-of-24 states."""
