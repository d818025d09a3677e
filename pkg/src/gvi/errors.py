"""Exception hierarchy shared by all modules."""


class GVIError(Exception):
    """Base class; ``module`` names the subsystem that raised it."""

    module = "gvi"

    def __init__(self, message, **context):
        super().__init__(message)
        self.message = message
        self.context = context

    def to_dict(self):
        return {"code": type(self).__name__, "module": self.module, "message": self.message}


class ShapeError(GVIError, ValueError):
    module = "tensor_core"


class QuadratureBudgetError(GVIError, ValueError):
    module = "quadrature"


class QuadratureEvaluationError(GVIError, FloatingPointError):
    module = "quadrature"


class PotentialError(GVIError, ValueError):
    module = "potential"


class ModeFindingError(GVIError, RuntimeError):
    module = "potential"


class SolverError(GVIError, RuntimeError):
    module = "gaussian_fit"


class RegionError(SolverError):
    """Iterate left the region where the canonical solution is unique."""


class NotSPDError(GVIError, ValueError):
    module = "gaussian_fit"


class OracleError(GVIError, RuntimeError):
    module = "oracle"


class DiagnosticsError(GVIError, ValueError):
    module = "diagnostics"


class BenchmarkError(GVIError, RuntimeError):
    module = "logreg_bench"
