"""Analysis package for attneraser."""
