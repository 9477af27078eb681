"""Edge-guided recurrent residual super-resolution in numpy."""
from ._backend import BACKEND
from .imaging import ImageBuffer, PatchSet
from .network import DegreeConfig, DegreeNetwork, predict_image

__all__ = ["BACKEND", "DegreeConfig", "DegreeNetwork", "ImageBuffer", "PatchSet", "predict_image"]
__version__ = "0.1.0"
