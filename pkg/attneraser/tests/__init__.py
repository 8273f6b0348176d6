"""Unit tests package for attneraser."""
