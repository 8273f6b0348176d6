"""Tools package for attneraser."""
