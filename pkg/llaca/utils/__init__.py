"""
Utility functions for the LLaCA package.

This package contains logging, file and format helpers used across the application.
"""
