"""Exception types shared across the package.

Every error raised by skipfuse derives from SkipfuseError, so callers can
catch the whole family or individual conditions. The CLI maps these onto
distinct exit codes (see skipfuse.cli).
"""


class SkipfuseError(Exception):
    """Base class for all skipfuse errors."""


# --- linear algebra ---------------------------------------------------------

class DimensionMismatch(SkipfuseError):
    """Operands have incompatible dimensions (e.g. a.cols != b.rows)."""


class NonSquare(SkipfuseError):
    """A square matrix was required."""


class SingularMatrix(SkipfuseError):
    """A pivot fell below the relative singularity threshold.

    When raised while fusing a model, `block` carries the 0-based index of
    the offending transformer block.
    """

    def __init__(self, message, block=None):
        super().__init__(message)
        self.block = block


class NonFinite(SkipfuseError):
    """An input contains NaN or Inf."""


class ShapeMismatch(SkipfuseError):
    """An array has the wrong shape for the operation or declared config."""


# --- configuration ----------------------------------------------------------

class ConfigError(SkipfuseError):
    """Base class for configuration problems."""


class InvalidConfig(ConfigError):
    """Field values violate a ModelConfig invariant."""


class UnknownKey(ConfigError):
    """A config file contains a key that is not part of the schema."""


class MissingKey(ConfigError):
    """A required config key is absent."""


class InvalidValue(ConfigError):
    """A config value failed to parse or is out of range."""


# --- model ------------------------------------------------------------------

class TokenOutOfRange(SkipfuseError):
    """A token id is >= vocab_size or negative."""


class InvalidModel(SkipfuseError):
    """ModelWeights violate the invariants implied by their config."""


# --- fusion -----------------------------------------------------------------

class ApplicabilityError(SkipfuseError):
    """The requested fusion does not apply to this model (topology, e != d,
    or the model is already in a reduced form)."""


class ConfigMismatch(SkipfuseError):
    """Two models cannot be compared (different d, vocab_size or n_layers)."""


# --- checkpoint i/o ---------------------------------------------------------

class CheckpointError(SkipfuseError):
    """Base class for checkpoint file problems."""


class IoFailure(CheckpointError):
    """Underlying file read/write failed."""


class BadMagic(CheckpointError):
    """File does not start with the checkpoint magic bytes."""


class CorruptHeader(CheckpointError):
    """Header or tensor directory is structurally invalid."""


class TruncatedPayload(CheckpointError):
    """Payload is shorter than the tensor directory declares."""


class InconsistentForm(CheckpointError):
    """Tensor directory disagrees with the declared reduced form."""
