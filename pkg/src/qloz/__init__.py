"""q^vol-weighted lozenge tilings of polygons and their GUE-corners limit."""
from __future__ import annotations

__version__ = "0.1.0"
