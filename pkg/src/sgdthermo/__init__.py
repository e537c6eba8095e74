"""Stationary distributions of SGD on scale-invariant losses, read as an ideal gas.

Simulates noisy gradient descent on the toy loss ``1 + mu . w / |w|`` under
fixed-sphere, fixed-ELR and fixed-LR training, estimates stationary energy,
entropy and radius, and checks them against thermodynamic predictions.
"""

__version__ = "0.1.0"
