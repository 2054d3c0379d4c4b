"""Desk-scale vessel image-to-mesh pipeline: LoG Bayesian segmentation, meshing and LDDMM refinement."""

__version__ = "0.1.0"
