"""Command-line entry point for semires experiments."""

from .main import main

__all__ = ["main"]
