"""qppo: hybrid quantum-classical PPO on simulated parameterized circuits."""

__version__ = "0.1.0"
