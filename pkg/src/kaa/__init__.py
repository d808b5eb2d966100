"""Kolmogorov-Arnold attention for graph neural networks, plus a small lab
that measures how far each scoring family can be pushed from a target
ranking of a fixed neighborhood."""

from . import attention, errors, gnn, graph, kan, mrd, tensor

__version__ = "0.1.0"

__all__ = ["attention", "errors", "gnn", "graph", "kan", "mrd", "tensor", "__version__"]
