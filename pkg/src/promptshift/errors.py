class InvalidArgument(ValueError):
    pass


class NumericFailure(ArithmeticError):
    pass


class InputMismatch(ValueError):
    """Raised when artifacts (model, stats, corpus) were not built together."""


class GenerationFailure(RuntimeError):
    pass
