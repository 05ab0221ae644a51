"""Graph collaborative filtering (NGCF and ablation variants) with hand-written kernels and gradients."""

__version__ = "0.1.0"
