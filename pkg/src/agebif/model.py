"""Model constants and the bundle of grids, rates and fertility profiles."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .birthop import BirthProfile
    from .evolve import Grids


@dataclass(frozen=True)
class ModelParams:
    """Mortality coefficients: prey ``alpha1*u + alpha2*v``, predator ``beta1*v - beta2*u``."""

    alpha1: float = 1.0
    alpha2: float = 1.0
    beta1: float = 1.0
    beta2: float = 1.0

    def __post_init__(self):
        for name in ("alpha1", "alpha2", "beta1", "beta2"):
            value = getattr(self, name)
            if not (value > 0 and value < float("inf")):
                raise ValueError(f"{name} must be positive and finite, got {value}")


@dataclass(frozen=True)
class Model:
    grids: Grids
    params: ModelParams
    prey: BirthProfile
    predator: BirthProfile


def build_model(
    n_interior: int = 64,
    length: float = 1.0,
    a_max: float = 1.0,
    steps: int = 128,
    params: ModelParams | None = None,
    prey_raw=None,
    predator_raw=None,
) -> Model:
    """Assemble a model with normalized profiles (constant profiles by default)."""
    from .birthop import normalize_profile
    from .evolve import make_grids

    grids = make_grids(n_interior, length, a_max, steps)
    ones = lambda: [1.0] * (steps + 1)
    lam = grids.lambda1
    prey = normalize_profile(ones() if prey_raw is None else prey_raw, lam, grids.age, kind="prey")
    predator = normalize_profile(
        ones() if predator_raw is None else predator_raw, lam, grids.age, kind="predator"
    )
    return Model(grids, params or ModelParams(), prey, predator)
