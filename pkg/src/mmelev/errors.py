"""Exception types. Each carries a short machine-readable ``category``."""


class MapError(ValueError):
    category = "map-error"


class DuplicateLayerError(MapError):
    category = "duplicate-layer"


class UnknownLayerError(MapError, KeyError):
    category = "unknown-layer"

    def __str__(self):
        return self.args[0] if self.args else ""


class GeometryError(MapError):
    category = "invalid-geometry"


class PoseError(MapError):
    category = "invalid-pose"


class ChannelError(MapError):
    category = "channel-error"


class ConfigError(MapError):
    category = "config-error"


class ParseError(MapError):
    """Raised for malformed text inputs; ``line`` is 1-based when known."""

    category = "parse-error"

    def __init__(self, message, line=None, source=None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(where + message)
