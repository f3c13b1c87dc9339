"""Exception hierarchy shared by the backends, controllers and harness."""


class CGRError(Exception):
    """Base class for every error raised by this package."""


class UnknownBackend(CGRError):
    pass


class TokenizationError(CGRError):
    pass


class ContextOverflow(CGRError):
    pass


class BackendUnavailable(CGRError):
    """The backend could not be reached. Retriable.

    ``status`` carries the HTTP status when one was received and
    ``partial_trace`` is attached by the decoder when a run dies midway.
    """

    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status
        self.partial_trace = None


class ProtocolError(CGRError):
    pass


class InvalidProfile(CGRError):
    pass


class TraceFormatError(CGRError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericalError(CGRError):
    pass


class SweepUnsupported(CGRError):
    pass


class InputError(CGRError):
    pass


class DatasetError(CGRError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(CGRError):
    pass


class PlotDataError(CGRError):
    pass
