class DimensionError(ValueError):
    """Two grids that must align have different shapes."""
