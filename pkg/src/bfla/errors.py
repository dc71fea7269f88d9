class ConfigError(ValueError):
    """Invalid shapes or runtime knobs."""


class DegenerateRowError(ArithmeticError):
    """A softmax row with no finite entry."""


class ContractViolation(RuntimeError):
    """A pipeline stage produced output that breaks a downstream precondition."""


class SizeGuardError(ValueError):
    """Refusing to materialize a dense N_q x N_kv matrix above the size guard."""
