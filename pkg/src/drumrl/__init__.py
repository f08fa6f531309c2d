"""Control-drum criticality and power-balance search with A2C/PPO on neural surrogates."""

__version__ = "0.1.0"
