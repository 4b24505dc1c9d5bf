"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """A precondition on an argument was violated."""


class ScheduleDomainError(ValueError):
    """A schedule was sampled outside its time domain."""


class ScaleOverflow(RuntimeError):
    """A drift coefficient exceeded the representable floating-point range."""


class NonFiniteDrift(RuntimeError):
    """A drift evaluation produced NaN or Inf."""

    def __init__(self, t, flat_index, particle=None):
        self.t = t
        self.flat_index = flat_index
        self.particle = particle
        where = f"particle {particle}" if particle is not None else f"state index {flat_index}"
        super().__init__(f"non-finite drift at t={t!r} ({where})")
