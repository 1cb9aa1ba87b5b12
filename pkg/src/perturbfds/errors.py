"""Exception and warning types shared across the package."""


class InvalidCurveError(ValueError):
    """Parameterization is not regular (zero speed) or otherwise unusable."""


class PlanError(ValueError):
    """A perturbation plan could not be constructed from the given inputs."""


class GeometryMismatchError(PlanError):
    """Replacement arc endpoints do not meet the cut endpoints."""


class SingularityError(ValueError):
    """Kernel evaluated at coincident source and target points."""


class SpecialFunctionError(ArithmeticError):
    """Bessel/Hankel evaluation returned a non-finite value."""


class NearEvaluationError(ValueError):
    """Target lies too close to the boundary for the smooth quadrature rule."""


class SolverSingularError(ArithmeticError):
    """A block that must be inverted is numerically singular."""


class FormulationBreakdownError(ArithmeticError):
    """The Woodbury core matrix is numerically singular."""

    def __init__(self, message, condition=float("inf")):
        super().__init__(message)
        self.condition = condition


class ConfigError(ValueError):
    """Experiment configuration failed validation."""


class DenseRankWarning(RuntimeWarning):
    """Numerical rank exceeded half the block size; a dense block may be cheaper."""


class RankGrowthWarning(RuntimeWarning):
    """HBS skeleton larger than half of the node's index range."""
