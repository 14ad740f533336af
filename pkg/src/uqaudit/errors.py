class DegenerateInputError(ValueError):
    pass


class InvalidModelError(ValueError):
    pass


class StepSizeError(ValueError):
    """Step size exceeds the stability bound declared by a sampler."""

    def __init__(self, step_size, bound):
        super().__init__(f"step size {step_size:.6g} exceeds stability bound {bound:.6g}")
        self.step_size = step_size
        self.bound = bound


class DivergedChainError(RuntimeError):
    def __init__(self, step, msg=None):
        super().__init__(msg or f"chain produced a non-finite iterate at step {step}")
        self.step = step


class UnsupportedRegionError(ValueError):
    pass


class AuditError(RuntimeError):
    pass


class ProtocolError(RuntimeError):
    pass


class TransportError(ProtocolError):
    pass


class ConfigError(ValueError):
    """Carries every validation problem found, not only the first."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems))
