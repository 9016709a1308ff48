"""Sequential recommender with dual disentanglement.

Subpackages split along the pipeline: data handling, adaptive sequence
masking, the two encoders, adversarial category disentanglement, the fused
model, training, and evaluation metrics. Everything runs on a small
tape-based autodiff core in :mod:`ddsrec.numerics`.
"""

__version__ = "0.1.0"
