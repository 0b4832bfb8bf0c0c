"""Synthetic page generation."""
