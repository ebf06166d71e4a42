"""Exception types shared across the package.

The CLI maps these onto process exit codes, so library code should pick
the most specific type that applies instead of raising bare ``Exception``.
"""


class ConfigError(Exception):
    """A run configuration is malformed or internally inconsistent."""


class DataError(Exception):
    """An input file or in-memory payload violates its format contract."""


class DivergenceError(Exception):
    """Training produced non-finite losses or gradients."""
