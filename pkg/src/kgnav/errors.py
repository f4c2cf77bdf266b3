"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures without
inspecting types: 1 usage/config, 2 data, 3 backend.
"""

from __future__ import annotations


class KGNavError(Exception):
    exit_code = 1


class ConfigError(KGNavError):
    """Invalid configuration or CLI usage."""

    exit_code = 1


class DataError(KGNavError):
    exit_code = 2


class ParseError(DataError):
    """Malformed input text. ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class NotFoundError(DataError, KeyError):
    def __str__(self) -> str:  # KeyError repr-quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class TemplateError(DataError):
    pass


class EmptyDatasetError(DataError):
    pass


class MissingLabelError(DataError):
    """Oracle hop prediction requested for a question without a hop label."""


class SetupError(DataError):
    """A question cannot be run against the graph (e.g. unknown topic entity)."""


class PromptTooSmallError(ConfigError):
    """The token budget cannot hold the instruction and question."""


class BackendError(KGNavError):
    exit_code = 3


class BackendUnavailableError(BackendError):
    pass


class ProtocolError(BackendError):
    pass


class ReplayMissError(BackendError):
    pass
