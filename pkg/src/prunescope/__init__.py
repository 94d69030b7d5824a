"""Divergence-based analysis of magnitude pruning.

Weight vectors are projected into Gaussian or Student-t latent spaces and
compared with KL divergence (AP3) alongside plain squared distance (AP2).
"""

__version__ = "0.1.0"
