"""Exception types shared across the toolkit.

Every error carries a short ``kind`` string so the CLI can print a
machine-parseable one-line message.
"""


class ToolkitError(Exception):
    kind = "ToolkitError"


class EmptyInput(ToolkitError, ValueError):
    kind = "EmptyInput"


class TooLong(ToolkitError, ValueError):
    kind = "TooLong"


class NonByteToken(ToolkitError, ValueError):
    kind = "NonByteToken"


class UnknownToken(ToolkitError, ValueError):
    kind = "UnknownToken"


class MissingCodebook(ToolkitError, ValueError):
    kind = "MissingCodebook"


class CodebookFormatError(ToolkitError, ValueError):
    kind = "CodebookFormatError"


class ShapeMismatch(ToolkitError, ValueError):
    kind = "ShapeMismatch"


class NonFiniteActivation(ToolkitError, FloatingPointError):
    kind = "NonFiniteActivation"


class NonFiniteGradient(ToolkitError, FloatingPointError):
    kind = "NonFiniteGradient"


class DegenerateRow(ToolkitError, RuntimeError):
    kind = "DegenerateRow"


class TargetOutOfRange(ToolkitError, ValueError):
    kind = "TargetOutOfRange"


class MissingPretrainedParams(ToolkitError, ValueError):
    kind = "MissingPretrainedParams"


class LabelRequired(ToolkitError, ValueError):
    kind = "LabelRequired"


class SingleClassDataset(ToolkitError, ValueError):
    kind = "SingleClassDataset"


class OddBatchSize(ToolkitError, ValueError):
    kind = "OddBatchSize"


class SingleClassInput(ToolkitError, ValueError):
    kind = "SingleClassInput"


class ConfigError(ToolkitError, ValueError):
    kind = "ConfigError"


class CheckpointError(ToolkitError, ValueError):
    kind = "CheckpointError"
