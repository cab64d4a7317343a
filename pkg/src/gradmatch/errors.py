"""Exception hierarchy shared by all gradmatch modules."""


class GradmatchError(Exception):
    """Base class for all errors raised by this package."""


class ImageIOError(GradmatchError):
    """File is missing, unreadable, or could not be written."""


class FormatError(GradmatchError):
    """File content does not parse under the named format."""


class DimensionError(GradmatchError):
    """Image or map dimensions violate an operation's requirements."""


class ParamError(GradmatchError):
    """A parameter value is outside its admissible range."""


class KindError(GradmatchError):
    """The requested metric kind does not support this operation."""


class OutOfBoundsError(GradmatchError):
    """A pixel coordinate lies outside the image domain."""


class BorderError(GradmatchError):
    """A coordinate is too close to the image border for this operation."""


class ConfigError(GradmatchError):
    """A configuration object or file is inconsistent."""


class EmptySelectionError(GradmatchError):
    """Point selection produced too few points to run an optimization."""


class SingularNormalEquationsError(GradmatchError):
    """The Gauss-Newton normal equations could not be solved."""
