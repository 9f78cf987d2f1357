"""Exception hierarchy shared across the package."""


class BiclipError(Exception):
    """Base class for every error raised by biclip."""

    kind = "error"

    def one_line(self) -> str:
        msg = " ".join(str(self).split())
        return f"error: {self.kind}: {msg}"


class ShapeError(BiclipError, ValueError):
    kind = "shape"


class DegenerateInputError(BiclipError, ValueError):
    kind = "degenerate-input"


class GraphError(BiclipError, RuntimeError):
    kind = "graph"


class NonFiniteError(BiclipError, FloatingPointError):
    kind = "non-finite"


class TensorFileError(BiclipError, OSError):
    kind = "tensor-file"


class BadMagicError(TensorFileError):
    kind = "bad-magic"


class TruncatedPayloadError(TensorFileError):
    kind = "truncated"


class ExtentOverflowError(TensorFileError):
    kind = "extent-overflow"


class DatasetError(BiclipError, ValueError):
    kind = "dataset"


class MissingFileError(DatasetError):
    kind = "missing-file"


class NonBinaryMaskError(DatasetError):
    kind = "non-binary"


class EmbeddingDimensionError(DatasetError):
    kind = "embedding-dim"


class ConfigError(BiclipError, ValueError):
    kind = "config"


class CorruptionSpecError(ConfigError):
    kind = "corruption-spec"


class CheckpointError(BiclipError, ValueError):
    kind = "checkpoint"
