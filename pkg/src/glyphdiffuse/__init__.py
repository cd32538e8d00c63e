"""Latent diffusion for styled word images, on a small numpy autodiff core."""
from .errors import (ContractError, DimensionError, FormatError, GlyphDiffuseError, LoadError, NumericError,
                     ParseError, ShapeError, ValidationError, VocabularyError)
from .tensor import Tensor, backward, gradcheck, no_grad

__version__ = "0.1.0"
