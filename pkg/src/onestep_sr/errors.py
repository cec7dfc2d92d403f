"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes, so library code should raise
these rather than bare ValueError/RuntimeError for contract violations.
"""


class Error(Exception):
    """Base class for all package errors."""


class ConfigError(Error):
    """Invalid parameter values or option combinations."""


class RangeError(Error):
    """A timestep or index outside its allowed range."""


class ShapeError(Error):
    """Array shape or format mismatch."""


class VocabError(Error):
    """Unknown token or a token missing from a prompt."""


class DataError(Error):
    """Corrupt or incomplete dataset on disk."""


class StateError(Error):
    """Missing prerequisite state, e.g. a required checkpoint."""


class TrainingError(Error):
    """Non-finite losses or other optimization failures."""
