"""Joint object-class and motion labelling with a dense CRF.

The package combines per-pixel object class costs with a geometric motion
likelihood derived from stereo ego-motion, couples both layers through a
learned class-motion correlation matrix and solves the joint model by
mean-field inference with Gaussian message filtering.
"""

from motioncrf.errors import ConfigError, DataError, MotionCRFError
from motioncrf.graph import pipeline

__all__ = ["ConfigError", "DataError", "MotionCRFError", "pipeline"]
__version__ = "0.1.0"
