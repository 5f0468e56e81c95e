"""Exception types shared across the engine.

Every error that can surface from a program statement derives from
:class:`EngineError`, so the program executor can convert any of them
into a ``None`` answer with a trace entry.
"""


class EngineError(Exception):
    """Base class for all recoverable engine errors."""


# -- scene container ---------------------------------------------------------

class MalformedContainer(EngineError):
    """Scene file violates the .gclf container format."""


class InvariantViolation(EngineError):
    """A loaded or constructed scene failed validation."""


class SpecInfeasible(EngineError):
    """Synthetic-city spec cannot be satisfied (e.g. no room to place objects)."""


# -- rendering ---------------------------------------------------------------

class PixelBudgetExceeded(EngineError):
    """Requested raster exceeds the configured pixel budget."""


# -- language field ----------------------------------------------------------

class UnknownClass(EngineError):
    """A label has no embedding in the provider's vocabulary."""


class GridMismatch(EngineError):
    """Two rasters/segments do not share the same grid geometry."""


# -- georeferencing ----------------------------------------------------------

class DegenerateConfiguration(EngineError):
    """Control points are collinear or duplicated."""


class Underdetermined(EngineError):
    """Too few control points for the requested transform kind."""


# -- landmark registry -------------------------------------------------------

class MalformedRegistry(EngineError):
    """Registry file is not the documented GeoJSON subset."""


class DuplicateName(EngineError):
    """Two registry entries normalize to the same name."""


class LandmarkNotFound(EngineError):
    """Lookup failed for a landmark name and all aliases."""


# -- geographic vision ops ---------------------------------------------------

class EmptyInput(EngineError):
    """An operation that requires a non-empty segment got an empty one."""


class EmptyArea(EmptyInput):
    """Search area segment is empty."""


class NonPositiveDistance(EngineError):
    """SegAround distance must be > 0."""


class ViewNotNorthAligned(EngineError):
    """Directional ops require the view's axes to align with world N/E."""


class NoFlatGaussians(EngineError):
    """Height estimation found no horizontal-plane Gaussians in the area."""


# -- providers ---------------------------------------------------------------

class ProviderUnavailable(EngineError):
    """Remote model service unreachable after retries (or stub unset)."""


class MalformedResponse(EngineError):
    """Provider reply did not match the wire protocol."""


class DimensionMismatch(EngineError):
    """Embedding dimension differs from the service's declared dim."""


# -- program engine ----------------------------------------------------------

class ProgramSyntaxError(EngineError):
    """Program text does not match the DSL grammar."""

    def __init__(self, message, line, column, expected=()):
        super().__init__(f"line {line}, col {column}: {message}")
        self.line = line
        self.column = column
        self.expected = tuple(expected)


class KindMismatch(EngineError):
    """A builtin or API received a value of the wrong kind."""


class GenerationFailed(EngineError):
    """Program generator produced unusable text twice."""


class InsufficientExamples(EngineError):
    """Prompt assembly asked for more in-context examples than stored."""


# -- evaluation harness ------------------------------------------------------

class MalformedRecord(EngineError):
    """A benchmark dataset line failed validation."""

    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no
