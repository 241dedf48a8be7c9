"""Errors shared across stages and surfaced by the command line."""


class ConfigError(ValueError):
    """Invalid or degenerate configuration."""


class ArtifactMissing(FileNotFoundError):
    """A file another stage should have produced does not exist."""


class VersionMismatch(ValueError):
    """An artifact was written by an incompatible format or a different upstream run."""
