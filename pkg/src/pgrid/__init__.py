"""Power-grid layout reconstruction from overhead rasters."""

__version__ = "0.1.0"
