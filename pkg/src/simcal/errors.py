"""Exception hierarchy shared across the package.

Configuration problems exit the CLI with code 2, numeric failures with
code 3; everything else is a plain bug.
"""


class SimcalError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SimcalError):
    """Invalid or inconsistent configuration (bad prior combination, schema
    mismatch, unsupported option)."""


class ContractError(SimcalError):
    """A caller violated an operation precondition (dimension mismatch,
    out-of-bounds parameter)."""


class NumericError(SimcalError):
    """Numeric failure at runtime (divergence, singular matrices)."""


class DivergedTrajectoryError(NumericError):
    """A simulator rollout produced non-finite or exploding states."""


class TrainingDivergenceError(NumericError):
    """Training loss became non-finite."""


class DegeneratePosteriorError(NumericError):
    """Posterior has (numerically) no mass inside its support box."""


class ComponentWiderThanProposalError(NumericError):
    """Gaussian division requested for a mixture component that is not
    strictly narrower than the Gaussian proposal."""

    def __init__(self, component: int):
        self.component = component
        super().__init__(
            f"mixture component {component} is wider than the Gaussian "
            "proposal; the division has no normalizable Gaussian form"
        )
