"""Boxplot figure rendering for remle simulation outputs."""

from .render import FigureSpec, SchemaError, load_spec, read_columns, render_boxplot

__version__ = "0.1.0"
