"""Computational laboratory for ergodic averages on finite models of Z^d
actions: averaging operators, Rokhlin/Kakutani towers, heavy-orbit
coverings, value-distribution sculpting, and a reproducible experiment
runner.
"""

__version__ = "0.1.0"
