"""Exception types raised across the package.

Every error carries a short machine-readable ``code`` so the CLI can print a
one-line ``error: <code>: <message>`` diagnostic.
"""


class ConductorError(Exception):
    code = "error"


class InputTooShortError(ConductorError, ValueError):
    code = "input-too-short"


class ShapeError(ConductorError, ValueError):
    code = "shape-mismatch"


class InvalidInputError(ConductorError, ValueError):
    code = "invalid-input"


class RejectedSequenceError(ConductorError, ValueError):
    code = "rejected-sequence"


class DegeneratePoseError(ConductorError, ValueError):
    code = "degenerate-pose"


class SamplingError(ConductorError, ValueError):
    code = "cannot-sample"


class TrainingDivergenceError(ConductorError, RuntimeError):
    code = "training-divergence"

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class CheckpointError(ConductorError, ValueError):
    code = "bad-checkpoint"


class FormatError(ConductorError, ValueError):
    code = "bad-format"


class ConfigError(ConductorError, ValueError):
    code = "bad-config"
