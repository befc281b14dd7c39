"""Exception hierarchy for the curation pipeline."""


class VidcurateError(Exception):
    """Base class for all package errors."""


class ManifestError(VidcurateError):
    """A manifest line failed to parse or validate."""


class ConfigError(VidcurateError):
    """A pipeline configuration is malformed or inconsistent."""


class MediaError(VidcurateError):
    """A media operation failed.

    Carries a stable ``code`` (e.g. ``missing_file``, ``undecodable``,
    ``zero_frames``, ``decode_failure``, ``encode_failure``, ``unwritable``)
    so callers can record the failure class without string matching.
    """

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class ProtocolError(VidcurateError):
    """A scorer sidecar or score file violated the wire protocol."""


class ProviderError(VidcurateError):
    """A scoring request could not be served.

    ``code`` is one of ``timeout``, ``unroutable``, ``sidecar_exit``,
    ``sidecar_dead``, ``remote_error`` or ``bad_result``.
    """

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class SelectionError(VidcurateError):
    """Budgeted selection was asked something it cannot answer."""


class SystemicProviderFailure(VidcurateError):
    """More than half of all records failed on provider errors."""
