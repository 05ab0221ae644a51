"""Exception hierarchy. The CLI maps each family onto an exit code."""


class NGCFError(Exception):
    exit_code = 1


class ConfigError(NGCFError):
    exit_code = 1


class DataError(NGCFError):
    exit_code = 2


class ParseError(DataError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class GraphError(DataError):
    pass


class CheckpointFormatError(DataError):
    pass


class CheckpointVersionError(CheckpointFormatError):
    pass


class ShapeError(NGCFError, ValueError):
    pass


class DivergenceError(NGCFError, FloatingPointError):
    exit_code = 3

    def __init__(self, message: str, layer: int | None = None, batch: int | None = None):
        super().__init__(message)
        self.layer = layer
        self.batch = batch
