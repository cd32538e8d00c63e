"""Exception types shared across the package."""


class GlyphDiffuseError(Exception):
    """Base class for all package errors."""


class DimensionError(GlyphDiffuseError, ValueError):
    """Operand shapes are incompatible."""


ShapeError = DimensionError


class NumericError(GlyphDiffuseError, FloatingPointError):
    """An operation produced NaN or Inf."""


class ValidationError(GlyphDiffuseError, ValueError):
    """A parameter or config value is out of its allowed range."""


class VocabularyError(GlyphDiffuseError, ValueError):
    """A character is not covered by the vocabulary."""


class ContractError(GlyphDiffuseError, RuntimeError):
    """A call violates an API precondition (e.g. backward on a non-scalar)."""


class FormatError(GlyphDiffuseError, ValueError):
    """A file does not follow the expected on-disk format."""


class LoadError(GlyphDiffuseError, OSError):
    """A referenced file could not be read."""


class ParseError(GlyphDiffuseError, ValueError):
    """A text file (manifest, config) is malformed."""
