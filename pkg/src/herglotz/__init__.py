"""Herglotz higher-order variational problems: solve and verify."""
