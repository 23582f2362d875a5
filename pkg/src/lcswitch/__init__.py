"""Trajectory-level laboratory for switching between coexisting limit cycles.

Subpackages cover the full chain: model operators, deterministic mean-field
analysis, stochastic wave-function trajectories, hidden-Markov segmentation,
censored survival statistics, rate-scaling fits, and event-conditioned
escape geometry, plus a reproducible batch pipeline.
"""

__version__ = "0.1.0"
