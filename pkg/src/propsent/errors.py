"""Exception hierarchy shared across the toolkit.

ValidationError covers bad inputs and broken invariants (CLI exit code 2);
ExternalServiceError covers failures of the remote attribute-scoring
service (CLI exit code 3).
"""


class PropsentError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(PropsentError):
    """Invalid input data, configuration, or violated contract."""


class ExternalServiceError(PropsentError):
    """The remote scoring service failed after bounded retries."""

    def __init__(self, message: str, *, status: int | None = None,
                 attribute: str | None = None):
        super().__init__(message)
        self.status = status
        self.attribute = attribute
