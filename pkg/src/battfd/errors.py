"""Exception hierarchy.

Every error raised on purpose by the package derives from ``BattFDError``;
the CLI maps each subclass to its own exit code.
"""


class BattFDError(Exception):
    exit_code = 1


class ConfigurationError(BattFDError, ValueError):
    exit_code = 2

    def __init__(self, message, line=None, source=None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where = f"{source}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class StabilityError(BattFDError, ValueError):
    """Explicit-Euler step violates the diffusion stability bound."""

    exit_code = 3

    def __init__(self, model, ratio):
        self.model = model
        self.ratio = ratio
        super().__init__(
            f"{model} model: dt * max|diag| = {ratio:.4g} exceeds 1; "
            "reduce dt or the node count"
        )


class OCPDomainError(BattFDError, ValueError):
    exit_code = 4

    def __init__(self, electrode, value, lo, hi):
        self.electrode = electrode
        self.value = value
        super().__init__(
            f"{electrode} stoichiometry {value:.6g} outside OCP map domain [{lo:.6g}, {hi:.6g}]"
        )


class SimulationDivergedError(BattFDError, RuntimeError):
    exit_code = 5

    def __init__(self, step, reason):
        self.step = step
        super().__init__(f"simulation left its sanity envelope at step {step}: {reason}")


class ObserverDivergedError(SimulationDivergedError):
    pass


class ConditioningError(BattFDError, RuntimeError):
    exit_code = 6

    def __init__(self, jitter):
        self.jitter = jitter
        super().__init__(f"covariance factorization failed; final jitter {jitter:.3g}")


class DesignError(BattFDError, ValueError):
    exit_code = 7


class BoundUndefinedError(BattFDError, ValueError):
    exit_code = 7


class CalibrationError(BattFDError, ValueError):
    exit_code = 8


class LearningGateError(BattFDError, ValueError):
    """Refusal to train an uncertainty model on a cycle flagged as faulty."""

    exit_code = 9


class SchemaError(BattFDError, ValueError):
    exit_code = 10
