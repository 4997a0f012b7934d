"""Enriched Petrov-Galerkin Darcy flow and upwind transport on triangles."""

__version__ = "0.1.0"
