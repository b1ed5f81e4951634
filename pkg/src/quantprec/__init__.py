"""Quantized Shampoo preconditioners: codebooks, matrix kernels, optimizers and analysis."""

__version__ = "0.1.0"
