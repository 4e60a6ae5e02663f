"""Exception hierarchy shared across the package."""


class CogError(Exception):
    """Base class for all errors raised by cogground."""


class ConfigError(CogError, ValueError):
    pass


class BackendError(CogError):
    """A grounding backend could not produce a reply."""

    def __init__(self, message, attempt_count=1):
        super().__init__(message)
        self.attempt_count = attempt_count


class TransportError(BackendError):
    pass


class BackendTimeout(BackendError):
    pass


class ProtocolError(BackendError):
    def __init__(self, message, status, body_excerpt="", attempt_count=1):
        super().__init__(message, attempt_count=attempt_count)
        self.status = status
        self.body_excerpt = body_excerpt


class ScriptedMiss(BackendError):
    pass


class PointParseError(CogError, ValueError):
    def __init__(self, message, raw):
        super().__init__(message)
        self.raw = raw


class PipelineError(CogError):
    """Raised when a pipeline run yields no usable point. Carries the partial trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class DegenerateMappingError(CogError, ValueError):
    pass


class ManifestError(CogError):
    pass


class ManifestParseError(ManifestError, ValueError):
    pass


class ManifestValidationError(ManifestError, ValueError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        self.record_ids = sorted({rid for rid, _ in self.diagnostics})
        lines = [f"{rid}: {msg}" for rid, msg in self.diagnostics]
        super().__init__("invalid manifest records:\n  " + "\n  ".join(lines))
