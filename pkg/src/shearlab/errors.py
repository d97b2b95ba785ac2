"""Exception types shared across the package."""


class ShearLabError(Exception):
    """Base class for all package errors."""


class NonMonotone(ShearLabError):
    """Shear profile derivative changes sign or is too close to zero."""


class RegularityFail(ShearLabError):
    """Finite-difference consistency check of profile derivatives failed."""


class OutOfRange(ShearLabError):
    """Requested value lies outside the range of the profile."""


class GradingMissing(ShearLabError):
    """Grid is not graded about the spectral point but the broadening requires it."""


class NearSingularResolvent(ShearLabError):
    """Condition estimate of the resolvent system exceeds the safety threshold."""


class NoConvergence(ShearLabError):
    """Broadening-limit family shows no decreasing Cauchy differences."""


class WitnessMismatch(ShearLabError):
    """Supplied decomposition does not reproduce the derivative on the grid."""


class TailTooLarge(ShearLabError):
    """Estimated scattering tail exceeds the accepted fraction of the integral."""


class StepTooLarge(ShearLabError):
    """Requested time step violates the stability bound of the integrator."""


class PoorFit(ShearLabError):
    """Least-squares decay fit has an r-squared below the acceptance floor."""


class Rejected(ShearLabError):
    """Profile failed spectrum certification and is outside scope."""


class ConfigInvalid(ShearLabError):
    """Run configuration failed validation."""
