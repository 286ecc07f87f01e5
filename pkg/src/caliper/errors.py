"""Exception types shared across the package."""


class CaliperError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(CaliperError, ValueError):
    """An argument violates a documented precondition."""


class DomainError(CaliperError, ValueError):
    """A mathematical operation was evaluated outside its domain."""


class InvertedElementError(DomainError):
    """A deformation state with det F <= 0 was encountered."""

    def __init__(self, jacobian, where=None):
        self.jacobian = jacobian
        self.where = where
        loc = f" at {where}" if where is not None else ""
        super().__init__(f"inverted state: det F = {jacobian}{loc}")


class GentLockupError(DomainError):
    """The Gent distortional invariant reached the locking singularity."""

    def __init__(self, stretch_measure, jm):
        self.stretch_measure = stretch_measure
        self.jm = jm
        super().__init__(
            f"Gent lock-up: Ibar1 - 3 = {stretch_measure} >= Jm = {jm}; "
            "consider a larger Jm initialization"
        )


class NonPositiveJacobianError(CaliperError):
    """An element has a non-positive isoparametric Jacobian."""

    def __init__(self, element, point, value):
        self.element = element
        self.point = point
        self.value = value
        super().__init__(
            f"detJ <= 0 in element {element} (gauss point {point}): {value}"
        )


class MeshParseError(CaliperError):
    """A mesh or dataset file does not match its documented schema."""

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)


class MeshValidationError(CaliperError):
    """A parsed mesh violates a structural invariant."""

    def __init__(self, failures):
        if isinstance(failures, str):
            failures = [failures]
        self.failures = list(failures)
        super().__init__("; ".join(self.failures))


class GenerationError(CaliperError):
    """A mesh generator produced a degenerate element."""

    def __init__(self, message, element=None):
        self.element = element
        super().__init__(message)


class SolverError(CaliperError):
    """The FEM oracle failed to converge."""

    def __init__(self, message, step=None, history=None):
        self.step = step
        self.history = history
        super().__init__(message)


class DivergenceError(CaliperError):
    """A training run produced non-finite losses persistently."""

    def __init__(self, message, checkpoint=None):
        self.checkpoint = checkpoint
        super().__init__(message)


class ConfigError(CaliperError):
    """A run configuration file is missing or malformed."""

    def __init__(self, message, path=()):
        self.path = tuple(path)
        loc = ".".join(str(p) for p in self.path)
        super().__init__(f"{loc}: {message}" if loc else message)
