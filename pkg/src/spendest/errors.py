"""Exception types shared across the pipeline.

The CLI maps these onto exit codes, so raising the right class matters
more than the message wording.
"""


class SpendestError(Exception):
    """Base class for every error this package raises deliberately."""


class ConfigError(SpendestError):
    """Bad run configuration: unknown keys, out-of-range knobs, bad flags."""


class MissingArtifactError(SpendestError):
    """A prerequisite artifact (model, study, prepared matrix) is absent."""


class DataError(SpendestError):
    """Malformed or contract-violating data: CSV cells, schemas, JSON docs."""
