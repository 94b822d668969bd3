"""Exception hierarchy shared by every module."""


class GaitKDError(Exception):
    exit_code = 1


class ConfigError(GaitKDError, ValueError):
    exit_code = 2


class ShapeError(GaitKDError, ValueError):
    exit_code = 2


class ClassCountError(ShapeError):
    pass


class LabelError(GaitKDError, ValueError):
    exit_code = 2


class MiningError(GaitKDError, ValueError):
    exit_code = 2


class DegenerateGapError(GaitKDError, ZeroDivisionError):
    exit_code = 4


class NumericError(GaitKDError, ArithmeticError):
    exit_code = 4


class ContractError(GaitKDError, RuntimeError):
    exit_code = 4


class TrainingError(GaitKDError, RuntimeError):
    exit_code = 5

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class CheckpointError(GaitKDError, IOError):
    exit_code = 3
