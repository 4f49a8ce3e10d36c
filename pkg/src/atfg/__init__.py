"""Quadrotor attitude-control lab: plant, PID baseline, lock-step link, PPO, metrics."""

__version__ = "0.1.0"
