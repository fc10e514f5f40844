"""plotkit: renders dynlab CSV artifacts into publication-style figures."""

__version__ = "0.1.0"

from plotkit.render import FIGURE_KINDS, SchemaError, render

__all__ = ["FIGURE_KINDS", "SchemaError", "render"]
