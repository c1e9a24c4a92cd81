from typing import Any, Optional


class InclusionError(Exception):
    error_type = "error"

    def to_dict(self) -> dict[str, Any]:
        return {"status": "failed", "error_type": self.error_type, "message": str(self)}


class DimensionError(InclusionError, ValueError):
    error_type = "dimension_error"


class ParameterError(InclusionError, ValueError):
    error_type = "parameter_error"


class DomainError(InclusionError, ValueError):
    error_type = "domain_error"


class NumericOverflowError(InclusionError, ArithmeticError):
    error_type = "numeric_overflow"


class ConfigError(InclusionError, ValueError):
    error_type = "config_error"

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        super().__init__(message)
        self.field = field
        self.line = line

    def to_dict(self) -> dict[str, Any]:
        out = super().to_dict()
        out["field"] = self.field
        out["line"] = self.line
        return out


class NonConvergenceError(InclusionError, RuntimeError):
    error_type = "nonconvergence"

    def __init__(
        self,
        message: str,
        residual: float = float("nan"),
        history: Optional[list[float]] = None,
        context: Optional[dict[str, Any]] = None,
    ):
        super().__init__(message)
        self.residual = float(residual)
        self.history = list(history or [])
        self.context = dict(context or {})

    def tagged(self, **context: Any) -> "NonConvergenceError":
        # same failure, with outer-stage context (step index, eps, delta) attached
        merged = {**self.context, **context}
        tags = ", ".join(f"{k}={v}" for k, v in context.items())
        return NonConvergenceError(f"{self} [{tags}]", self.residual, self.history, merged)

    def to_dict(self) -> dict[str, Any]:
        out = super().to_dict()
        out["residual"] = None if self.residual != self.residual else self.residual
        out["history"] = self.history
        out["context"] = self.context
        return out
