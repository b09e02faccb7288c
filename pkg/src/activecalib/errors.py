"""Exception hierarchy shared across the package."""


class CalibrationError(Exception):
    """Base class for all errors raised by this package."""


class AngleAtPi(CalibrationError):
    """Rotation angle is within tolerance of pi, where the log map is non-unique."""


class BehindCamera(CalibrationError):
    """A 3D point has non-positive depth in the camera frame."""


class BadDimensions(CalibrationError, ValueError):
    """Board dimensions are out of range."""


class EmptyCandidateSet(CalibrationError):
    """Every generated candidate pose was rejected by the visibility check."""


class MarkerOutOfView(CalibrationError):
    """Too few markers remain visible in a simulated measurement."""


class UnknownMarker(CalibrationError, KeyError):
    """An observation references a marker id the board does not contain."""


class SingularSystem(CalibrationError):
    """The damped normal equations could not be solved."""


class DegenerateMotion(CalibrationError):
    """Robot motions are rank deficient (e.g. parallel rotation axes)."""


class DegenerateConfiguration(CalibrationError):
    """Point configuration is degenerate for pose estimation (e.g. collinear)."""


class SingularInformation(CalibrationError):
    """The information matrix is rank deficient; parameters are unidentifiable."""


class CandidateInvisible(CalibrationError):
    """Fewer than the minimum number of markers are predicted visible."""


class NoEvaluableCandidates(CalibrationError):
    """No candidate in the set could be scored."""


class CandidatesExhausted(CalibrationError):
    """A selection policy ran out of unvisited candidates."""


class DegenerateInput(CalibrationError, ValueError):
    """Statistical input has zero variance or too few samples."""


class InsufficientFrames(CalibrationError, ValueError):
    """Too few measurement frames for the requested metric."""


class ParseError(CalibrationError, ValueError):
    """A config or dataset file could not be parsed."""


class VersionMismatch(ParseError):
    """A file declares an unsupported format version."""


class InvariantViolation(CalibrationError, ValueError):
    """A loaded or constructed value violates a documented invariant."""
