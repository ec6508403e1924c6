"""Exception types shared across the package.

Two broad families matter to callers: errors caused by user-supplied
files or parameters (config text, weight blobs, presets, CLI values)
and errors raised by the compute path itself.  The CLI maps the former
to exit code 2 and the latter to exit code 1.
"""


class StreamGemmError(Exception):
    """Base class for every error raised by this package."""


class InputError(StreamGemmError):
    """Bad user-supplied input: config text, weight bytes, presets, CLI values."""


# --- network config parsing ---------------------------------------------

class ConfigError(InputError):
    """Base for errors in .cfg network descriptions."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmptyConfig(ConfigError):
    def __init__(self, what="sections"):
        super().__init__(f"config contains no {what}")


class MissingNetHeader(ConfigError):
    def __init__(self, found=None, line=None):
        got = f"[{found}]" if found else "nothing"
        super().__init__(f"first section must be [net], found {got}", line)
        self.found = found


class UnknownSection(ConfigError):
    def __init__(self, name, line=None):
        super().__init__(f"unsupported section [{name}]", line)
        self.name = name


class MissingRequiredKey(ConfigError):
    def __init__(self, section, key, line=None):
        super().__init__(f"section [{section}] needs key '{key}'", line)
        self.section = section
        self.key = key


class UnknownActivation(ConfigError):
    def __init__(self, name, line=None):
        super().__init__(f"unknown activation '{name}'", line)
        self.name = name


class InvalidDimension(ConfigError):
    def __init__(self, message, line=None):
        super().__init__(message, line)


class NonIntegralOutputDim(ConfigError):
    def __init__(self, layer_index, detail="", line=None):
        msg = f"layer {layer_index}: output dims are not integral"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg, line)
        self.layer_index = layer_index


# --- weight files ---------------------------------------------------------

class WeightsError(InputError):
    """Base for errors in binary weight files."""


class BadHeader(WeightsError):
    pass


class TruncatedFile(WeightsError):
    def __init__(self, expected, got):
        super().__init__(f"weight file too short: need {expected} bytes, have {got}")
        self.expected = expected
        self.got = got


class TrailingBytes(WeightsError):
    def __init__(self, count):
        super().__init__(f"{count} unread bytes after last layer")
        self.count = count


class NegativeVariance(WeightsError):
    def __init__(self, value, layer_index=None):
        where = f"layer {layer_index}: " if layer_index is not None else ""
        super().__init__(f"{where}batchnorm variance {value} < 0")
        self.layer_index = layer_index
        self.value = value


# --- engine and runtime ---------------------------------------------------

class DimMismatch(StreamGemmError):
    """Operand shapes do not line up."""


class VerificationFailed(StreamGemmError):
    """Streamed engine output did not match the reference bit for bit."""


class BudgetExceeded(InputError):
    """Requested tile working set does not fit the configured on-chip budget."""


class UnsupportedLayer(InputError):
    """Layer kind parses but has no execution path."""


# --- perf model and reporting ---------------------------------------------

class InvalidPreset(InputError):
    """Device preset rejected: bad field value or incompatible with the config."""


class SchemaMismatch(InputError):
    """CSV input does not match the benchmark report schema."""
