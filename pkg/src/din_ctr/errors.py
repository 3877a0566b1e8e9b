"""Exception types raised across the package."""


class SchemaError(ValueError):
    pass


class DuplicateGroupName(SchemaError):
    pass


class InvalidCardinality(SchemaError):
    pass


class MissingGroupCategory(SchemaError):
    """Schema lacks a user-behavior group or an ad group."""


class IdOutOfRange(ValueError):
    pass


class OneHotArity(ValueError):
    pass


class WidthMismatch(ValueError):
    pass


class NonFiniteGradient(FloatingPointError):
    def __init__(self, tensor: str):
        super().__init__(f"non-finite gradient in tensor {tensor!r}")
        self.tensor = tensor


class UnknownFeatureOccurrence(KeyError):
    """A feature id present in a training batch has no occurrence count."""


class UndefinedMetric(ValueError):
    pass


class DivisionByRandomBaseline(ZeroDivisionError):
    pass


class NoAttention(TypeError):
    pass


class SchemaMismatch(ValueError):
    pass


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class DataFormatError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line
