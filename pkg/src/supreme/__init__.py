"""Transfer clustering with confidence-weighted pairwise constraints and a perturbation remedy."""

__version__ = "0.1.0"
