class KsSmoothError(Exception):
    """Base class for all errors raised by the package."""


class InvalidParameters(KsSmoothError, ValueError):
    pass


class InvalidWeight(KsSmoothError, ValueError):
    pass


class DegenerateZeroMode(KsSmoothError, ValueError):
    """A negative-order multiplier was applied to a field with nonzero mean."""


class EmptyWeight(KsSmoothError, ValueError):
    """Every cube of the family carried (numerically) zero weight mass."""


class AnnulusExceedsBox(KsSmoothError, ValueError):
    """A dyadic kernel piece does not fit inside the periodic box."""


class SideMismatch(KsSmoothError, ValueError):
    pass
