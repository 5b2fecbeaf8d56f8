"""
Tests for the under-reporting audit package.
"""
