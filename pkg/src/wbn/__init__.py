"""Feedforward classifiers with weighted loss and weighted batch normalization.

Modules
-------
data       dataset readers, imbalanced subsets, mini-batches
weighting  uniform / ICF / CBL sample weights and batch normalizers
netcore    forward pass with none / bn / wbn layers, checkpoints
backprop   analytic gradients and finite-difference checks
optim      Xavier initialization and Adamax
verify     Monte-Carlo unbiasedness checks
harness    training protocol, evaluation and reports
cli        command-line entry point
"""

from .netcore import NetworkConfig, NetworkModel, forward_full
from .weighting import WeightScheme, compute_weights

__version__ = "0.1.0"

__all__ = ["NetworkConfig", "NetworkModel", "forward_full", "WeightScheme", "compute_weights"]
