"""Exception hierarchy. Every error is a ``ValueError`` so callers can catch broadly."""


class VecLutError(ValueError):
    pass


class InvalidTrit(VecLutError):
    pass


class IndexOutOfRange(VecLutError):
    pass


class UnrepresentableK(VecLutError):
    pass


class ModeMismatch(VecLutError):
    pass


class CorruptPayload(VecLutError):
    pass


class ShapeMismatch(VecLutError):
    pass


class ConfigInfeasible(VecLutError):
    pass


class BlockBoundViolation(VecLutError):
    pass


class NonFiniteInput(VecLutError):
    pass


class DivisibilityError(VecLutError):
    pass
