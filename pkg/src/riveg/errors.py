"""Exception hierarchy shared across the package.

The CLI maps these onto stable exit codes: usage problems exit 1,
data problems exit 2, backend/transport problems exit 3.
"""


class RivegError(Exception):
    """Base class for all errors raised by this package."""


class DataError(RivegError):
    """Invalid file contents, schema violations, or inconsistent inputs."""


class BackendError(RivegError):
    """Transport failures or malformed responses from a model backend."""


class ProtocolError(BackendError):
    """A request or response does not match the wire protocol schema."""
