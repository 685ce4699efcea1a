"""
Configuration module for LLaCA.

This module provides default configuration settings and utilities for
managing configuration across the application.
"""
