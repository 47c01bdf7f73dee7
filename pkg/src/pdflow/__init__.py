"""Inertial primal-dual flows for separable convex problems with linear constraints."""

__version__ = "0.1.0"
