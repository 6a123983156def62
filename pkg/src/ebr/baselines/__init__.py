"""Reference interpolators: DINEOF, ensemble Kalman smoothing, optimal interpolation."""
from .enks import EnKSConfig, EnsembleCollapse, climatology, enks, enks_smooth
from .oi import OIConfig, oi_interpolate, tune_oi
from .pca import PcaModel, dineof_interpolate, pca_fit

__all__ = ["EnKSConfig", "EnsembleCollapse", "climatology", "enks", "enks_smooth",
           "OIConfig", "oi_interpolate", "tune_oi", "PcaModel", "dineof_interpolate", "pca_fit"]
