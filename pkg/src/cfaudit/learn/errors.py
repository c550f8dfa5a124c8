class SingleClassTraining(ValueError):
    """Training labels do not contain both classes."""


class DimensionMismatch(ValueError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"expected {expected} columns, got {got}")
        self.expected = expected
        self.got = got
