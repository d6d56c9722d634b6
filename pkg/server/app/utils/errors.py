"""Exception hierarchy shared by the services, the CLI and the HTTP routes.

Every error carries the CLI exit code it maps to and a JSON-able diagnostics
payload that ends up in the result record of a failed run.
"""
from typing import Any, Dict, Optional


class BeltramiError(Exception):
    exit_code = 1

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.diagnostics = diagnostics or {}
        # resolution, epsilon and mu_bound of the run that raised, when known
        self.context: Dict[str, Any] = {}

    def to_payload(self) -> Dict[str, Any]:
        return {
            "error": type(self).__name__,
            "message": self.message,
            "exit_code": self.exit_code,
            "diagnostics": self.diagnostics,
        }


class SchemaError(BeltramiError):
    """Malformed input: config files, structure files, grid arguments."""
    exit_code = 2


class StructureRejectedError(SchemaError):
    pass


class OutOfRegimeError(BeltramiError):
    """The equation left the regime where the solver contracts."""
    exit_code = 3


class TargetViolationError(OutOfRegimeError):
    pass


class NumericalFailureError(BeltramiError):
    exit_code = 4
