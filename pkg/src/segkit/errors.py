"""Exception hierarchy. Everything raised on bad data derives from SegkitError."""


class SegkitError(Exception):
    pass


class MalformedRle(SegkitError, ValueError):
    pass


class ShapeMismatch(SegkitError, ValueError):
    pass


# inverse TTA mapping reports inconsistent mask extents under this name
ShapeError = ShapeMismatch


class InvalidRect(SegkitError, ValueError):
    pass


class InvalidTarget(SegkitError, ValueError):
    pass


class ParseError(SegkitError, ValueError):
    pass


class SchemaError(SegkitError, ValueError):
    pass


class MaskError(SegkitError, ValueError):
    pass


class EmptySource(SegkitError, ValueError):
    pass


class FormatError(SegkitError, ValueError):
    pass


class EmptyList(SegkitError, ValueError):
    pass


class SchemaMismatch(SegkitError, ValueError):
    def __init__(self, message, name=None):
        super().__init__(message)
        self.name = name


class UnknownId(SegkitError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ConfigError(SegkitError, ValueError):
    def __init__(self, message, path="$"):
        super().__init__(f"{path}: {message}")
        self.path = path


class IoError(SegkitError, OSError):
    pass
