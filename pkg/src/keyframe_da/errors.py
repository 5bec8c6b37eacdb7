"""Exception hierarchy shared by every module."""


class KeyframeDAError(Exception):
    """Base class for all errors raised by keyframe_da."""


class DataError(KeyframeDAError, ValueError):
    """Bad input data: malformed files, wrong shapes, invalid values."""


class StreamFormatError(DataError):
    def __init__(self, message, line=None, path=None):
        self.reason = message
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f"{':' if where else 'line '}{line}"
        super().__init__(f"{where}: {message}" if where else message)


class DimensionError(DataError):
    pass


class NonFiniteError(DataError):
    pass


class ZeroVectorError(DataError):
    pass


class CategoryRangeError(DataError):
    pass


class ParameterShapeError(DataError):
    pass


class CheckpointError(DataError):
    pass


class ConfigError(DataError):
    """Invalid configuration or simulation spec; message names the field."""


class NumericDivergenceError(KeyframeDAError, ArithmeticError):
    """Loss or gradient became non-finite; the update was not applied."""


class PretrainFailure(KeyframeDAError):
    """Source pre-training did not reach the required accuracy."""
