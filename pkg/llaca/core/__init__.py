"""
Core modules of LLaCA: parameter vectors, the dynamic EMA policy, the toy
network, task streams, the continual trainer and the metric engine.
"""
