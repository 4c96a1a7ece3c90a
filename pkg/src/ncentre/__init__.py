"""Fixed-energy trajectories and symbolic dynamics for the planar anisotropic N-centre problem."""

__version__ = "0.1.0"
