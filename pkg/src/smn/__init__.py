"""Pedestrian trajectory prediction with a spatially structured memory."""

from .errors import SMNError
from .model import VARIANTS, ModelConfig, SMNModel, parameter_count

__all__ = ["SMNError", "VARIANTS", "ModelConfig", "SMNModel", "parameter_count"]
__version__ = "0.1.0"
