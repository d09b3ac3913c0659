"""Exception taxonomy for plotkit."""


class PlotkitError(Exception):
    """Base class for all plotkit failures."""


class SchemaError(PlotkitError):
    """The CSV does not carry an expected column or schema header."""


class EmptyInput(PlotkitError):
    """The CSV holds no data rows."""


class InvalidSpec(PlotkitError):
    """The figure spec is malformed or names an unknown kind."""
