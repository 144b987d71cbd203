"""Meta-learned synthetic contextual bandits for classic-control RL."""

__version__ = "0.1.0"
