"""Exception hierarchy shared across the package.

ValidationError and its subclasses mean the caller handed us bad input
(malformed files, unknown ids, out-of-range parameters) and map to CLI
exit code 1.  BackendError covers failures while talking to an embedding
or scoring service and maps to exit code 2.
"""


class IqaragError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(IqaragError):
    """Input data or parameters failed a contract check."""


class ManifestError(ValidationError):
    """A dataset manifest file is missing, malformed, or inconsistent."""


class FeatureFileError(ValidationError):
    """A feature file is missing, corrupt, or truncated."""


class DimensionMismatchError(ValidationError):
    """Vector dimensions disagree where they must match."""


class UnknownImageError(ValidationError):
    """An image id was referenced that the given collection does not contain."""


class DegenerateDataError(ValidationError):
    """A statistic is undefined for the given data (e.g. constant input)."""


class EmptyAnchorSetError(IqaragError):
    """No reference anchors are available; callers should fall back."""


class BackendError(IqaragError):
    """A scoring or embedding service request failed."""


class TransportError(BackendError):
    """The service could not be reached; the request may be retried."""


class BackendProtocolError(BackendError):
    """The service answered, but the reply violates the protocol."""
