class NumericError(ArithmeticError):
    """A computation produced NaN or Inf."""
