"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command line front end:
2 for configuration problems, 3 for numerical failures.
"""


class RydrxError(Exception):
    exit_code = 3
    module = "rydrx"

    def to_dict(self):
        return {
            "error": type(self).__name__,
            "module": self.module,
            "message": str(self),
        }


class ConfigurationError(RydrxError, ValueError):
    exit_code = 2
    module = "config"

    def __init__(self, message, problems=None):
        super().__init__(message)
        self.problems = list(problems or [])

    def to_dict(self):
        d = super().to_dict()
        if self.problems:
            d["problems"] = [{"path": p, "reason": r} for p, r in self.problems]
        return d


class DomainError(RydrxError, ValueError):
    """Argument outside the mathematical domain of an operation."""
    exit_code = 2


class DimensionError(RydrxError, ValueError):
    exit_code = 2


class ModelError(RydrxError, ValueError):
    """Invalid level scheme or drive graph."""
    exit_code = 2
    module = "lindblad"


class NonConvergenceError(RydrxError, ArithmeticError):
    module = "lindblad"


class IntegrationError(RydrxError, ArithmeticError):
    module = "lindblad"

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time

    def to_dict(self):
        d = super().to_dict()
        d["time_s"] = self.time
        return d


class ScanError(RydrxError):
    module = "spectroscopy"

    def __init__(self, message, detuning=None):
        super().__init__(message)
        self.detuning = detuning

    def to_dict(self):
        d = super().to_dict()
        d["detuning_rad_per_s"] = self.detuning
        return d


class FeatureAmbiguityError(RydrxError):
    module = "spectroscopy"

    def __init__(self, message, n_peaks=None):
        super().__init__(message)
        self.n_peaks = n_peaks

    def to_dict(self):
        d = super().to_dict()
        d["n_peaks"] = self.n_peaks
        return d


class NoOperatingPointError(RydrxError):
    module = "demod"


class UnresolvedPhaseError(RydrxError):
    module = "phase"
