"""Exception hierarchy shared across the package."""


class SpecNovoError(Exception):
    """Base class for all package errors."""


class ParseError(SpecNovoError):
    """Malformed input text. ``position`` is a character offset or line number."""

    def __init__(self, message, position=None):
        self.position = position
        if position is not None:
            message = f"{message} (at {position})"
        super().__init__(message)


class DomainError(SpecNovoError, ValueError):
    """A value outside the domain an operation accepts."""


class EmptySpectrumError(DomainError):
    pass


class FormulaError(ParseError):
    def __init__(self, message, symbol=None, position=None):
        self.symbol = symbol
        super().__init__(message, position)


class TokenError(ParseError):
    pass


class StructureError(SpecNovoError):
    """SMILES tokens do not describe a well-formed graph."""


class ValenceError(StructureError):
    def __init__(self, message, atom_index=None):
        self.atom_index = atom_index
        super().__init__(message)


class DimensionError(SpecNovoError, ValueError):
    pass


class NumericsError(SpecNovoError, ArithmeticError):
    pass


class SizeError(SpecNovoError):
    pass


class CheckpointError(SpecNovoError):
    pass


class DeadEnd(SpecNovoError):
    """A decoding hypothesis has no admissible continuation."""


class EmptyBeam(SpecNovoError):
    """Beam search finished without any surviving candidate."""


class IoError(SpecNovoError, OSError):
    """A path that is missing or cannot be read or written."""
