"""
PWFN - Probabilistic Weight-Fixing Networks

Train small networks whose weights are Gaussian distributions, then fix them
one popular cluster at a time onto a shared codebook of additive
powers-of-two.
"""

__version__ = '1.0.0'
