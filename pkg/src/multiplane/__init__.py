"""Multi-plane volumetric classifier with KAN-guided spatial-channel
attention, built on a self-contained float64 autodiff tensor engine."""

__version__ = "0.1.0"
