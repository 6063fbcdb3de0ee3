"""Desk-scale peeling workbench.

Simulates a planar torque-controlled arm peeling synthetic produce,
generates graded demonstrations, trains a diffusion imitation policy,
and finetunes it against a hybrid quantitative/qualitative reward.
"""

__version__ = "0.1.0"
