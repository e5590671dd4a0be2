"""Exception hierarchy shared across the package."""


class MVMolError(Exception):
    """Base class for all package errors."""


# tensor engine
class ShapeError(MVMolError, ValueError):
    pass


class DegenerateMaskError(MVMolError, ValueError):
    pass


class NormalizationError(MVMolError, ValueError):
    pass


class EmptyReductionError(MVMolError, ValueError):
    pass


class RankError(MVMolError, ValueError):
    pass


class OptimizerStateError(MVMolError, ValueError):
    pass


class NonFiniteError(MVMolError, FloatingPointError):
    pass


# data
class InputError(MVMolError, ValueError):
    pass


class ParseError(MVMolError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ValidationError(MVMolError, ValueError):
    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class CategoryError(MVMolError, ValueError):
    pass


class ResolutionError(MVMolError, KeyError):
    def __init__(self, message, missing=()):
        self.missing = list(missing)
        super().__init__(message)

    def __str__(self):
        return self.args[0]


class SamplingError(MVMolError, ValueError):
    pass


# model
class CapacityError(MVMolError, ValueError):
    pass


class ContractError(MVMolError, ValueError):
    pass


class NegativeMiningError(MVMolError, ValueError):
    pass


class BatchingError(MVMolError, ValueError):
    pass


class LabelError(MVMolError, ValueError):
    pass


class CheckpointError(MVMolError, ValueError):
    pass
