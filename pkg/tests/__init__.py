"""
Tests for CXRAgent
"""
