"""
Exceptions raised by dalembert.

Every class carries a stable ``kind`` string that ends up in run summaries and reports.
"""


class DalembertError(Exception):
    kind = "error"

    def to_dict(self):
        return {"kind": self.kind, "message": str(self)}


class InvalidArgumentError(DalembertError, ValueError):
    kind = "invalid-argument"


class InvalidSpecError(InvalidArgumentError):
    kind = "invalid-spec"


class HypothesisViolationError(DalembertError):
    """An analytic precondition of the reaction formula failed numerically."""

    kind = "hypothesis-violation"

    def __init__(self, message, hypothesis):
        super().__init__(f"{hypothesis} violated: {message}")
        self.hypothesis = hypothesis


class SingularBError(DalembertError):
    kind = "singular-b"

    def __init__(self, message, condition=float("inf"), hypothesis=None):
        super().__init__(message)
        self.condition = condition
        self.hypothesis = hypothesis

    def to_dict(self):
        d = super().to_dict()
        d["condition"] = self.condition
        if self.hypothesis:
            d["hypothesis"] = self.hypothesis
        return d


class DomainError(DalembertError):
    kind = "domain"

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class DomainExitError(DomainError):
    """The flow left the open domain during a step."""

    kind = "domain-exit"

    def __init__(self, message, time, stage=None, point=None):
        super().__init__(message, point)
        self.time = time
        self.stage = stage

    def to_dict(self):
        d = super().to_dict()
        d["time"] = self.time
        if self.stage is not None:
            d["stage"] = self.stage
        return d


class ProjectionFailureError(DalembertError):
    kind = "projection-failure"

    def __init__(self, message, last_iterate):
        super().__init__(message)
        self.last_iterate = last_iterate


class StepUnderflowError(DalembertError):
    kind = "step-underflow"

    def __init__(self, message, time):
        super().__init__(message)
        self.time = time

    def to_dict(self):
        d = super().to_dict()
        d["time"] = self.time
        return d


class ConfigError(DalembertError):
    kind = "config"

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key
