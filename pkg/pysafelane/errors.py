class SafeLaneError(Exception):
    """
    Basic exception class for errors raised by the library. Carries a numeric error code and a message, the code
    identifies the error family so the command line can map it onto an exit status.
    """
    err_code = 0

    def __init__(self, message=None, err_code=None):
        super(SafeLaneError, self).__init__(message)
        if err_code is not None:
            self.err_code = err_code
        self.message = str(message) if message is not None else 'Unknown error occurred'

    def __str__(self):
        return 'Error #{err_code}: {message}'.format(err_code=self.err_code, message=self.message)


class SafeLaneArgumentError(SafeLaneError):
    """Raised when a required argument is missing or malformed."""
    err_code = 1


class ParameterDomainError(SafeLaneArgumentError):
    """A physical parameter or argument lies outside its admissible domain."""
    err_code = 1


class ConventionError(SafeLaneError):
    """The obstacle side or lane expansion convention is violated."""
    err_code = 2


class NumericalError(SafeLaneError):
    """
    A numerical kernel failed: Riccati iteration diverged, an LP came back with an unexpected status or an
    integrator produced non-finite derivatives. `residual` holds the last residual seen when one is available.
    """
    err_code = 3

    def __init__(self, message=None, residual=None):
        super(NumericalError, self).__init__(message)
        self.residual = residual


class IntegrationFault(NumericalError):
    pass


class EstimationError(SafeLaneError):
    """The passing-time equation has no root inside the search bracket."""
    err_code = 4


class ConfigError(SafeLaneError):
    """
    Scenario configuration error: unreadable file, schema violation, unknown key or failed audit. `key` is the
    dotted path of the offending entry, when there is one.
    """
    err_code = 5

    def __init__(self, message=None, key=None):
        if key:
            message = '{key}: {message}'.format(key=key, message=message)
        super(ConfigError, self).__init__(message)
        self.key = key
