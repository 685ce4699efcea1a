"""
LLaCA - dynamic EMA update policy for continual learning.

This package provides the dynamic exponential-moving-average weight, a small
reference network, synthetic task streams, the continual training loop and
the continual-learning metric suite.
"""

__version__ = "1.0.0"
