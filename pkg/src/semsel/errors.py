"""Exception hierarchy.

Every error maps to one of three process exit codes used by the CLI:
2 for configuration problems, 3 for bad input data, 4 for numerical failures.
"""

from __future__ import annotations


class SemselError(Exception):
    exit_code = 1


class ConfigError(SemselError, ValueError):
    exit_code = 2


class DataError(SemselError, ValueError):
    exit_code = 3


class NumericalError(SemselError, ArithmeticError):
    exit_code = 4


# data loading / validation
class MissingFile(DataError, FileNotFoundError):
    pass


class DimensionMismatch(DataError):
    pass


class UnknownLabel(DataError):
    pass


class NonFiniteValue(DataError):
    pass


class EmptyMask(DataError):
    pass


class LengthMismatch(DataError):
    pass


class EmptyEvalSet(DataError):
    pass


class SingleClass(DataError):
    pass


class BundleMismatch(DataError):
    pass


# configuration
class TooFewClasses(ConfigError):
    pass


class DegenerateK(ConfigError):
    pass


class DuplicateClassId(ConfigError):
    pass


class IndexOutOfRange(ConfigError, IndexError):
    pass


class TooFewIndividuals(ConfigError):
    pass


class TooManyAttributes(ConfigError):
    pass


class InvalidSpec(ConfigError):
    pass


# numerics
class SingularPencil(NumericalError):
    pass


class NonSymmetricInput(NumericalError):
    pass


# warnings
class ZeroEmbeddingWarning(RuntimeWarning):
    pass


class ZeroPrototypeWarning(RuntimeWarning):
    pass


class ConstantColumnWarning(RuntimeWarning):
    pass
