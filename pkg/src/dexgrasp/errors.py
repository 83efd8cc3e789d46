class DexgraspError(Exception):
    """Base class for all package errors."""


class InvalidInputError(DexgraspError, ValueError):
    pass


class CapacityError(DexgraspError):
    pass


class DegenerateInputError(DexgraspError, ValueError):
    pass


class DescriptorError(DexgraspError, ValueError):
    """Hand descriptor failed to parse or violates a model invariant."""


class UndefinedEnergyError(DexgraspError, ValueError):
    pass


class DivergedError(DexgraspError, RuntimeError):
    def __init__(self, step, message="energy became non-finite"):
        super().__init__(f"{message} at step {step}")
        self.step = step


class IndeterminateError(DexgraspError, RuntimeError):
    """LP solver could not reach a trustworthy verdict."""


class SchemaError(DexgraspError, ValueError):
    pass
