"""Exception hierarchy shared across the package."""


class NLMapError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(NLMapError, ValueError):
    pass


class SchemaError(NLMapError, ValueError):
    pass


class CapabilityError(NLMapError):
    """A provider or backend was asked for something it cannot do."""


class TransportError(NLMapError):
    """A remote call failed.

    ``attempts`` and ``retryable`` let callers decide whether to try again.
    """

    def __init__(self, message, *, url=None, attempts=1, retryable=True, status=None):
        super().__init__(message)
        self.url = url
        self.attempts = attempts
        self.retryable = retryable
        self.status = status


class MapFormatError(NLMapError):
    pass


class VersionError(MapFormatError):
    pass


class IntegrityError(MapFormatError):
    pass


class EmptyProposalError(NLMapError):
    """The LLM completion contained no object names."""


class ScriptMissError(NLMapError, LookupError):
    """A scripted backend has no entry for the requested prompt."""


class UnboundOptionError(NLMapError):
    def __init__(self, label, best_similarity):
        super().__init__(f"option {label!r} has no policy above threshold (best {best_similarity:.3f})")
        self.label = label
        self.best_similarity = best_similarity


class SceneGenerationError(NLMapError):
    pass


class ConfigError(NLMapError, ValueError):
    pass
