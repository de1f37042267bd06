class NumericalError(ValueError):
    """Singular matrix, degenerate design or similar numerical failure."""
