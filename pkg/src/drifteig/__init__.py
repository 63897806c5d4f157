"""Large-drift limits of principal eigenvalues for planar advection-diffusion operators."""

__version__ = "0.1.0"
