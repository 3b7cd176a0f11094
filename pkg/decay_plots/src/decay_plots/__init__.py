"""Figure rendering for sweep CSVs, coupled to the producer only by schema.

Nothing here imports the harness that writes the CSVs; the six-column
header is the whole interface.
"""

from .figures import EXPECTED_HEADER, FigureSpec, SchemaMismatch, render_figure

__all__ = ["EXPECTED_HEADER", "FigureSpec", "SchemaMismatch", "render_figure"]
