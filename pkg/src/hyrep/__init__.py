"""hyrep: hyperbolic representation learning for phoneme-style decoding.

Library + CLI: Poincaré-ball arithmetic, a reverse-mode tape, a hyperbolic
classifier with a differentiable hierarchical-clustering loss, Riemannian
SGD training, synthetic taxonomy data, and structural evaluation tools.
"""

__version__ = "0.1.0"
