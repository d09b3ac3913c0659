"""Curvature analysis and gradient-descent regime lab for homogeneous
ReLU networks: Gauss-Newton Hessian decomposition, positive-curvature
metrics, random-logit-model analytics, and sweep-driving CLI."""

__version__ = "0.1.0"
