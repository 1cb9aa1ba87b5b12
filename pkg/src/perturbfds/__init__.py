"""Fast direct solvers for boundary integral equations on locally perturbed 2D curves."""

from .errors import (ConfigError, DenseRankWarning, FormulationBreakdownError,
                     GeometryMismatchError, InvalidCurveError, NearEvaluationError, PlanError,
                     RankGrowthWarning, SingularityError, SolverSingularError,
                     SpecialFunctionError)
from .geometry import (Curve, Discretization, PerturbationPlan, build_panels, circle, ellipse,
                       make_refinement_plan, make_reshape_plan, squircle, star, sunflower,
                       with_bump)
from .kernels import KernelSpec, eval_potential

__version__ = "0.1.0"
