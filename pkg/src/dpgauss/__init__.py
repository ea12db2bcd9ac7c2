"""Private estimation of multivariate Gaussians."""
__version__ = "0.1.0"
