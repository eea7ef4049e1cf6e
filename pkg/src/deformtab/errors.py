"""Exception types shared across the package."""


class DeformtabError(Exception):
    """Base class for all package errors."""


class InvalidInputError(DeformtabError, ValueError):
    pass


class ShapeError(DeformtabError, ValueError):
    pass


class ConfigError(DeformtabError, ValueError):
    pass


class DomainError(DeformtabError, ValueError):
    pass


class InvalidAnnotationError(DeformtabError, ValueError):
    pass


class UndefinedMetricError(DeformtabError, ValueError):
    pass


class DecodeError(DeformtabError, ValueError):
    """Raised when an image or weight file cannot be decoded.

    ``offset`` is the byte position where the stream stopped making sense.
    """

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class FoldError(DeformtabError, ValueError):
    """A polygon vertex has no preimage under the sampling field."""

    def __init__(self, vertex_index, residual):
        super().__init__(
            f"vertex {vertex_index} cannot be inverted through the field "
            f"(best residual {residual:.3f} px)"
        )
        self.vertex_index = vertex_index
        self.residual = residual


class NumericError(DeformtabError, ArithmeticError):
    def __init__(self, message, index=None):
        if index is not None:
            message = f"{message} at coordinate {index}"
        super().__init__(message)
        self.index = index
