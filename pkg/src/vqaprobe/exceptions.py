class VQAProbeError(Exception):
    """Base class for every error raised by this package."""


class InvalidQuestion(VQAProbeError, ValueError):
    pass


class GenerationError(VQAProbeError, ValueError):
    pass


class OracleError(VQAProbeError, ValueError):
    pass


class ModelError(VQAProbeError, ValueError):
    pass


class SimError(VQAProbeError, ValueError):
    pass


class BatchError(VQAProbeError, ValueError):
    pass


class ConfigError(VQAProbeError, ValueError):
    pass


class AlignmentError(VQAProbeError, ValueError):
    pass
