"""Deterministic multicore DVFS scheduling simulator with a hierarchical
multi-agent RL scheduler (HiDVFS), its single-agent variant (SARB), and
non-learning governor baselines."""

__version__ = "0.1.0"
