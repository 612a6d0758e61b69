"""Exception hierarchy; each class carries the CLI exit code it maps to."""


class CiteIntentError(Exception):
    exit_code = 1


class ConfigError(CiteIntentError, ValueError):
    """Bad arguments or configuration values."""

    exit_code = 2


class DataError(CiteIntentError, ValueError):
    """Malformed or inconsistent input data (datasets, corpora, verbalizer files)."""

    exit_code = 3


class ModelError(CiteIntentError, RuntimeError):
    """Failures inside a language model backend or during training."""

    exit_code = 4


class TrainingDiverged(ModelError):
    def __init__(self, message, dump_path=None):
        super().__init__(message)
        self.dump_path = dump_path
