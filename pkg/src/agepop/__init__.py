"""Two-sex age-structured population model on a finite-difference lattice."""
from .core import (
    AgeGrid,
    FertilityModuli,
    LatticeFunction,
    MaternityModuli,
    PopulationState,
    SexPair,
    SurvivalCurve,
    TimeGrid,
    build_age_grid,
    from_transformed,
    to_transformed,
)
from .errors import (
    AgepopError,
    ExtrapolationError,
    FactorizationFailed,
    InvalidArgument,
    InvalidState,
    NotApplicable,
    ParseError,
    StabilityWarning,
)
from .scheme import SchemeConfig, assemble_operators, build_stepper, run_projection

__version__ = "0.1.0"
