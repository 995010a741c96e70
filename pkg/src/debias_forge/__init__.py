"""debias-forge: group-balanced counterfactual dataset construction and bias metrics."""

__version__ = "0.1.0"
