"""Revenue management with consecutive-stay requests: exact oracles, fluid LPs,
proposal-based policies and a Monte Carlo verification harness."""

__version__ = "0.1.0"
