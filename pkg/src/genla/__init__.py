"""Generalized link adaptation: cellular downlink simulator, multi-objective
envelope Q-learning and a distributed actor-learner training engine."""

__version__ = "0.1.0"
