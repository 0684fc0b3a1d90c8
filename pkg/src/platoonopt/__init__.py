"""Coordinated vehicle platooning: routing, scheduling, and the repeated
route-then-schedule heuristic, on an embedded MILP solver."""

__version__ = "0.1.0"
