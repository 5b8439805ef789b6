"""Exception taxonomy.

The CLI maps these onto distinct exit codes (see ``cli.EXIT_CODES``), so
keep the hierarchy flat and the class names stable.
"""


class EtsyncError(Exception):
    """Base class for all toolkit errors."""


# --- numerics ---------------------------------------------------------------

class NumericsError(EtsyncError):
    """Failure inside a linear-algebra kernel."""


class SingularMatrix(NumericsError):
    pass


class NotSymmetric(NumericsError):
    pass


class NoConvergence(NumericsError):
    pass


class NotStabilizable(NumericsError):
    pass


# --- graph / design validation ----------------------------------------------

class NotStronglyConnected(EtsyncError):
    pass


class SpectralGapViolation(EtsyncError):
    pass


class LambdaOutOfRange(EtsyncError):
    pass


class VarphiNotLessThanOne(EtsyncError):
    pass


# --- steady-state generator construction -------------------------------------

class SingularT(EtsyncError):
    pass


class NotObservable(EtsyncError):
    pass


class NotControllable(EtsyncError):
    pass


class NotHurwitz(EtsyncError):
    pass


# --- simulation runtime -------------------------------------------------------

class SimulationError(EtsyncError):
    pass


class NonFiniteState(SimulationError):
    pass


class ZenoGuardTripped(SimulationError):
    pass


# --- configuration ------------------------------------------------------------

class ParseError(EtsyncError):
    """Malformed config text; message carries line/field information."""


class ValidationError(EtsyncError):
    """Well-formed config that violates a structural or model assumption."""
