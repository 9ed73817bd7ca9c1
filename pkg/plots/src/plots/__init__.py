"""Static figure rendering for detection-performance CSV artifacts."""

from .render import SchemaError, read_csv, render_curves, render_samplepath

__all__ = ["SchemaError", "read_csv", "render_curves", "render_samplepath"]

__version__ = "0.1.0"
