class NumericDegeneracyError(ValueError):
    """A computation hit a degenerate numeric case (zero vector, non-unit input...)."""


class ParseError(ValueError):
    """Malformed binary or text artifact."""

    def __init__(self, path, offset: int, expected: str, found: str = ""):
        self.path = str(path)
        self.offset = offset
        self.expected = expected
        self.found = found
        msg = f"{self.path}: at byte {offset}: expected {expected}"
        if found:
            msg += f", found {found}"
        super().__init__(msg)
