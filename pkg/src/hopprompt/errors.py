"""Exception hierarchy shared across the package.

CLI exit-code mapping: ConfigError-family -> 2, InfeasibleError-family -> 3,
NumericError-family -> 4 (see cli.py).
"""


class HopPromptError(Exception):
    """Base class for all package errors."""


class DimensionError(HopPromptError):
    """Shapes of operands do not line up; message names both shapes."""


class StructuralError(HopPromptError):
    """Malformed CSR structure or graph data."""


class ParameterError(HopPromptError):
    """A hyperparameter is outside its valid range."""


class ContractError(HopPromptError):
    """API misuse: non-scalar loss in backward, GLoRA factors in off mode, etc."""


class DegenerateRowError(HopPromptError):
    """A cosine-similarity operand row has near-zero norm; caller decides fallback."""


class NumericError(HopPromptError):
    """An operation produced a non-finite value."""


class DivergenceError(NumericError):
    """Training loss went non-finite; carries epoch and learning rate."""

    def __init__(self, message: str, epoch: int, lr: float):
        super().__init__(f"{message} (epoch={epoch}, lr={lr})")
        self.epoch = epoch
        self.lr = lr


class DatasetError(HopPromptError):
    """Dataset ingestion failure with file/line context."""


class ConfigError(HopPromptError):
    """Invalid experiment or CLI configuration."""


class CheckpointError(HopPromptError):
    """Corrupt, incompatible, or wrong-version checkpoint file."""


class SplitError(HopPromptError):
    """A k-shot split cannot be formed (e.g. a class has no labeled nodes)."""


class InfeasibleError(HopPromptError):
    """An experiment cannot be run as configured."""


class RewireInfeasibleError(InfeasibleError):
    """Target homophily unreachable; carries the achievable range."""

    def __init__(self, target: float, achieved_range: tuple[float, float]):
        lo, hi = achieved_range
        super().__init__(
            f"target homophily {target:.3f} unreachable; "
            f"achievable range ~[{lo:.3f}, {hi:.3f}]"
        )
        self.target = target
        self.achieved_range = achieved_range


class PretrainInfeasibleError(InfeasibleError):
    """Graph admits no valid (anchor, positive, negative) triplets."""


class TransferInfeasibleError(InfeasibleError):
    """Source/target datasets are incompatible (feature widths differ)."""
