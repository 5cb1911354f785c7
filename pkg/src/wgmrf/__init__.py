"""Wrapped Gaussian Markov random fields for large spatial directional data.

Submodules
----------
circular    wrapped-normal primitives and winding-number weights
sparse      sparse SPD matrices, Cholesky factorization, GMRF sampling
mesh        triangulated meshes, FEM matrices, SPDE precision, projection
model       the wrapped-GMRF hierarchical model and its Gibbs sampler
baselines   IID wrapped normal and low-rank wrapped GP comparison models
prediction  circular kriging and the induced circular correlation
validation  circular metrics, spatial-block folds, EDA tools
cli         command-line front end (simulate / mesh / fit / predict / cv ...)
"""

__version__ = "0.1.0"
