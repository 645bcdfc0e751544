"""Constrained training of wide two-layer ReLU networks by stochastic gradient
play on a surrogate Lagrangian, with randomized classifiers, LP shrinking, and
Monte Carlo checks of the supporting theory."""

__version__ = "0.1.0"
