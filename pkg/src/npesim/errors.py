"""Exception hierarchy shared by the simulator layers."""


class NpeError(Exception):
    """Base class for every error raised by npesim."""


class AssemblyError(NpeError, ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(where + message)


class InvalidOperandError(NpeError, ValueError):
    pass


class MemoryBoundsError(NpeError, IndexError):
    pass


class UnboundRegisterError(NpeError, ValueError):
    pass


class ConfigError(NpeError, ValueError):
    """Malformed cost table, network spec or op-count sheet."""
