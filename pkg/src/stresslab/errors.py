"""Exception hierarchy.

Every error carries a short machine-readable ``code`` which the CLI prints
as ``error: <code>: <message>``.
"""


class StressLabError(Exception):
    code = "error"


class InvalidParameters(StressLabError, ValueError):
    code = "invalid-parameters"


class NoLoadSurface(StressLabError, ValueError):
    code = "no-load-surface"


class FloatingMaterial(InvalidParameters):
    code = "floating-material"


class IncompressibleMaterial(InvalidParameters):
    code = "incompressible-material"


class SingularSystem(StressLabError, ArithmeticError):
    code = "singular-system"


class CatalogParseError(StressLabError, ValueError):
    code = "catalog-parse-error"


class ProblemFailed(StressLabError):
    """A solver error annotated with the provenance of the failing problem."""

    code = "problem-failed"


class FormatError(StressLabError, IOError):
    code = "io-error"


class BadMagic(FormatError):
    code = "bad-magic"


class VersionMismatch(FormatError):
    code = "version-mismatch"


class TruncatedPayload(FormatError):
    code = "truncated-payload"


class EmptyDataset(StressLabError, ValueError):
    code = "empty-dataset"


class DegenerateSplit(StressLabError, ValueError):
    code = "degenerate-split"


class ShapeMismatch(StressLabError, ValueError):
    code = "shape-mismatch"


class NonFiniteError(StressLabError, FloatingPointError):
    code = "non-finite"


class GradCheckFailed(StressLabError, AssertionError):
    code = "check-failed"


class ConfigMismatch(StressLabError, ValueError):
    code = "config-mismatch"


class LengthMismatch(StressLabError, ValueError):
    code = "length-mismatch"


class DegenerateVariance(StressLabError, ValueError):
    code = "degenerate-variance"
