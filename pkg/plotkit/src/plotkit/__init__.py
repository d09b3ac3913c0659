"""plotkit: offline figure regeneration from goldizone CSV logs."""

from .errors import EmptyInput, InvalidSpec, PlotkitError, SchemaError
from .figures import FIGURE_KINDS, REGIME_COLORS, FigureSpec, render, \
    spec_from_dict
from .reader import Table, read_table

__all__ = [
    "EmptyInput", "InvalidSpec", "PlotkitError", "SchemaError",
    "FIGURE_KINDS", "REGIME_COLORS", "FigureSpec", "render",
    "spec_from_dict", "Table", "read_table",
]
