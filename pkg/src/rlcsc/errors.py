"""Exception hierarchy. Each class maps to a distinct CLI exit code."""


class RlcscError(Exception):
    exit_code = 1


class ShapeError(RlcscError, ValueError):
    exit_code = 2


class ConfigError(RlcscError, ValueError):
    exit_code = 3


class DataError(RlcscError, ValueError):
    exit_code = 4


class DivergenceError(RlcscError, FloatingPointError):
    exit_code = 5


class CheckpointError(RlcscError, ValueError):
    exit_code = 6


class GradientError(RlcscError, RuntimeError):
    exit_code = 7
