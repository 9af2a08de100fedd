"""Physics-guided multi-modal masked-autoencoder pipeline for wireless CSI.

Synthetic multipath channel generation, self-supervised pretraining with a
spatial-spectrum distillation target, and downstream localization plus
multi-/single-user hybrid precoding benchmarks with exhaustive-search
oracles.
"""

__version__ = "0.1.0"
