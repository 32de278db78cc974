"""Tensor-aided multi-user channel estimation for 3D massive MIMO."""

__version__ = "0.1.0"
