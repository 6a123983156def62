"""Energy-based interpolation of irregularly sampled signals and images."""
__version__ = "0.1.0"
