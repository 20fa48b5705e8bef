"""Exception hierarchy shared across the package."""


class SceneCodeError(Exception):
    """Base class for all package errors."""


class DimensionError(SceneCodeError):
    """Tensor shapes are inconsistent with the requested operation."""


class ContractError(SceneCodeError):
    """A caller violated an operation's preconditions."""


class ConfigError(SceneCodeError):
    """A network or training configuration is internally inconsistent."""


class DomainError(SceneCodeError):
    """A value lies outside its declared domain."""


class FormatError(SceneCodeError):
    """A persisted file does not carry the expected magic bytes."""


class VersionError(SceneCodeError):
    """A persisted file has an unsupported format version."""


class CorruptionError(SceneCodeError):
    """A persisted file is structurally damaged (truncated or inconsistent)."""
