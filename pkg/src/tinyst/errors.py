"""Exception hierarchy.

Data problems derive from :class:`DataError`, numerical blow-ups from
:class:`NumericalError`; the CLI maps these to exit codes 2 and 3.
"""


class ToolkitError(Exception):
    pass


class DataError(ToolkitError):
    pass


class SchemaError(DataError):
    def __init__(self, column, message=None):
        self.column = column
        super().__init__(message or f"missing or invalid column: {column!r}")


class DuplicateIdError(DataError):
    def __init__(self, utt_id):
        self.utt_id = utt_id
        super().__init__(f"duplicate utterance id: {utt_id!r}")


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class EmptyCorpusError(DataError):
    pass


class SplitMismatchError(DataError):
    pass


class UnsupportedFormatError(DataError):
    def __init__(self, field, message=None):
        self.field = field
        super().__init__(message or f"unsupported audio format: {field}")


class CorruptFileError(DataError):
    pass


class TooShortError(DataError):
    def __init__(self, minimum, got):
        self.minimum = minimum
        self.got = got
        super().__init__(f"input too short: need at least {minimum}, got {got}")


class PairingError(DataError):
    pass


class NoResultError(DataError):
    pass


class DomainError(ToolkitError, ValueError):
    pass


class ConfigError(ToolkitError, ValueError):
    def __init__(self, field, message=None):
        self.field = field
        super().__init__(message or f"invalid configuration field: {field!r}")


class LayoutError(ToolkitError, ValueError):
    pass


class CapacityError(ToolkitError):
    pass


class NumericalError(ToolkitError, FloatingPointError):
    def __init__(self, where, message=None):
        self.where = where
        super().__init__(message or f"non-finite values in {where}")
