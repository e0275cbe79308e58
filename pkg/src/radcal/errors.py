"""Exception hierarchy shared by all radcal modules."""


class RadcalError(Exception):
    """Base class for every error raised by radcal."""


class NumericalDomain(RadcalError, ValueError):
    """An input lies outside the numerical domain of a function."""


class DegenerateProjection(NumericalDomain):
    """A point projects onto the distortion center, so its radial line is undefined."""


class DegenerateConfiguration(RadcalError):
    """The input geometry does not determine a unique solution."""


class ParallelAxesDegenerate(DegenerateConfiguration):
    """All rig cameras share a principal axis direction; rig poses are not determined."""


class UnconnectedRig(DegenerateConfiguration):
    """The camera/frameset registration graph splits into several components."""


class AllTrialsFailed(DegenerateConfiguration):
    """No rig-initialization trial reached closure."""


class NoValidSolution(RadcalError):
    """Every candidate solution was rejected by the validity checks."""


class NotEnoughInliers(NoValidSolution):
    """The best robust model has fewer inliers than required."""


class EmptyRegistration(NoValidSolution):
    """No image could be registered."""


class InsufficientData(RadcalError, ValueError):
    """Fewer data points than the minimal sample size."""


class NumericalFailure(RadcalError):
    """The optimizer could not make progress on an indefinite system."""


class InfeasibleSpec(RadcalError, ValueError):
    """A synthetic scenario cannot produce enough observations."""


class ParseError(RadcalError):
    """A file could not be parsed."""


class IntegrityError(RadcalError):
    """A parsed file violates referential integrity."""
