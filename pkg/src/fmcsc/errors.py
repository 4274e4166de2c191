"""Exception hierarchy shared by every module.

Each error family maps to a CLI exit code so that the orchestrator can
propagate failures with round/client context attached.
"""

from __future__ import annotations


class FmcscError(Exception):
    exit_code = 1

    def with_context(self, context: str) -> "FmcscError":
        self.args = (f"{context}: {self.args[0] if self.args else ''}",) + self.args[1:]
        return self


class ConfigError(FmcscError, ValueError):
    exit_code = 2


class ContractError(FmcscError, ValueError):
    """A caller violated an operation's precondition."""

    exit_code = 2


class DataError(FmcscError):
    exit_code = 3

    def __init__(self, message: str, path: str | None = None, offset: int | None = None):
        where = ""
        if path is not None:
            where = f" [{path}" + (f" @ byte {offset}" if offset is not None else "") + "]"
        super().__init__(message + where)
        self.path = path
        self.offset = offset


class ProtocolError(FmcscError):
    exit_code = 4


class ShapeError(ContractError):
    def __init__(self, message: str, layer: int | None = None):
        if layer is not None:
            message = f"layer {layer}: {message}"
        super().__init__(message)
        self.layer = layer


class CacheError(ContractError):
    pass


class DegenerateInputError(ContractError):
    pass
