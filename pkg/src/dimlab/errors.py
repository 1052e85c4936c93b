"""Exception types shared across the package."""


class DimlabError(Exception):
    """Base class for all package errors."""


class DimensionError(DimlabError):
    """Tensor shapes are incompatible with the requested operation."""


class ParameterError(DimlabError):
    """An argument value is outside its legal range."""


class PermutationError(DimlabError):
    """An index list that must be a permutation is not a bijection."""


class ContractError(DimlabError):
    """A caller violated an operation's precondition."""


class NumericError(DimlabError):
    """A computation produced or encountered non-finite values."""


class ConfigError(DimlabError):
    """An invalid configuration value or combination."""


class SchemaError(DimlabError):
    """A file does not match its expected schema."""


class DataError(DimlabError):
    """Loaded data is unusable (empty, mismatched, corrupt)."""


class DegenerateFeature(DimlabError):
    """A feature column is constant in the batch (or the batch is too small)
    so no linear baseline can be fitted. Callers decide whether to skip."""


class ComplianceUndefined(DimlabError):
    """No valid adjacent pairs exist, so the compliance score has no value."""
