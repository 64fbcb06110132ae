"""Exception hierarchy shared by every stage of the repair pipeline."""


class HwfixError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(HwfixError):
    pass


# -- HDL frontend -----------------------------------------------------------

class LexError(HwfixError):
    def __init__(self, message, line):
        super().__init__(f"line {line}: {message}")
        self.line = line


class UnterminatedString(LexError):
    pass


class UnterminatedBlockComment(LexError):
    pass


class ParseError(HwfixError):
    def __init__(self, message, line=None, path=None):
        where = []
        if path:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.line = line
        self.path = path


# -- corpus -----------------------------------------------------------------

class CorpusError(HwfixError):
    pass


class MissingFile(CorpusError):
    pass


class SpanOutOfRange(CorpusError):
    pass


class IncompleteVariations(CorpusError):
    pass


# -- model gateway ----------------------------------------------------------

class GatewayError(HwfixError):
    pass


class AuthMissing(GatewayError):
    pass


class EndpointError(GatewayError):
    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


class RateLimited(EndpointError):
    pass


class RetriesExhausted(GatewayError):
    pass


class CassetteMiss(GatewayError):
    pass


# -- evaluation -------------------------------------------------------------

class EvalError(HwfixError):
    """A candidate could not be judged, e.g. the repaired file does not parse."""


class SimulatorNotFound(ConfigError):
    """No usable simulator toolchain; runs abort before any work starts."""
