"""Partial identification toolkit for binary instrumental-variable problems."""
