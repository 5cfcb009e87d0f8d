"""Exception hierarchy.

Everything raised on purpose derives from :class:`HostnetError`; the CLI
maps :class:`NumericError` to exit code 3 and the rest to exit code 2.
"""


class HostnetError(Exception):
    pass


class ParseError(HostnetError):
    """Malformed CoNLL-U input."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class StructureError(HostnetError):
    """Head links that do not form a tree."""


class DimensionError(HostnetError, ValueError):
    pass


class NumericError(HostnetError, ArithmeticError):
    pass


class EmptyGraphError(HostnetError, ValueError):
    pass


class ConfigError(HostnetError, ValueError):
    pass


class TrainingError(HostnetError):
    pass


class VocabularyError(HostnetError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class DecodeError(HostnetError, ValueError):
    pass


class SchemaError(HostnetError, ValueError):
    """Dataset record failing validation; message names record and field."""


class HierarchyError(SchemaError):
    """A fine-grained label set on a non-hostile record."""


class LoadError(HostnetError):
    pass


class UndefinedMetricError(HostnetError, ValueError):
    pass
