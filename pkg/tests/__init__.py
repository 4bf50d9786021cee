"""Test package for fracspde."""
