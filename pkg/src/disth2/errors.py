"""Exception types raised across the package."""


class Disth2Error(Exception):
    """Base class for all package errors."""


class DimensionError(Disth2Error, ValueError):
    """Matrix blocks do not agree with the declared dimensions."""


class FormatError(Disth2Error, ValueError):
    """A model, certificate or controller file cannot be parsed."""


class SingularInterconnection(Disth2Error):
    """``Delta - A^SS`` is numerically singular (the network is ill-posed)."""


class IllPosed(Disth2Error):
    """A closed loop that must be well-posed is not."""


class Unstable(Disth2Error):
    """An operation that requires a Schur-stable system received an unstable one."""


class HypothesisViolated(Disth2Error):
    """A structural assumption of the certificate (e.g. ``B^Sd = 0``) fails."""


class NumericalFailure(Disth2Error):
    """The conic solver stopped without a usable answer."""


class InfeasibleAtHi(Disth2Error):
    """Bisection was started with an upper bracket that is not feasible."""


class Infeasible(Disth2Error):
    """The existence conditions have no solution at the requested level."""


class ReconstructionError(Disth2Error):
    """Controller construction from a feasible certificate failed.

    ``stage`` names the construction step that raised.
    """

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage


class NearSingularCompletion(ReconstructionError):
    """``I - X Y`` is too close to singular to complete the storage matrix."""


class SingularY(ReconstructionError):
    """A pairwise dual scale ``Y_ij`` cannot be inverted."""


class InertiaMismatch(ReconstructionError):
    """The pairwise scale difference does not split as required."""


class SingularPi(ReconstructionError):
    """The local quadratic-form matrix is singular."""


class EliminationPreconditionFailed(ReconstructionError):
    """One of the two projected conditions needed for elimination fails.

    ``which`` is ``"kernel_V"`` or ``"kernel_U"``, ``margin`` the offending
    extreme eigenvalue.
    """

    def __init__(self, message, which, margin, stage="theta"):
        super().__init__(message, stage=stage)
        self.which = which
        self.margin = margin


class ReconstructionFailed(ReconstructionError):
    """No controller parameter with a negative definite residual was found."""


class SingularZ(Disth2Error):
    """Fixed interconnection multipliers give a singular local block matrix."""
