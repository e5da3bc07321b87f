"""Lattices, discrete norms and the survival-probability change of variables.

All per-sex quantities are carried in a :class:`SexPair`.  Maternity and
fertility moduli are keyed by two letters: the first is the sex of the
newborn, the second the sex of the parent, so ``mf`` is the rate at which
parents of the *female* sex produce *male* newborns, sampled on the female
age grid.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Generic, Iterator, Literal, TypeVar

import numpy as np

from .errors import InvalidArgument, InvalidState

V = TypeVar("V")

#: Lower bound applied to survival probabilities so that ``p / pi`` stays finite.
PI_FLOOR = 1e-12

SEXES = ("m", "f")


@dataclass(frozen=True)
class SexPair(Generic[V]):
    male: V
    female: V

    def __getitem__(self, sex: str) -> V:
        if sex == "m":
            return self.male
        if sex == "f":
            return self.female
        raise KeyError(sex)

    def __iter__(self) -> Iterator[V]:
        yield self.male
        yield self.female

    def items(self):
        return (("m", self.male), ("f", self.female))

    def map(self, func) -> "SexPair":
        return SexPair(func(self.male), func(self.female))


@dataclass(frozen=True)
class AgeGrid:
    """Equidistant age lattice ``a_i = i * h`` on ``[0, a_dag]``."""

    a_dag: float
    n: int

    def __post_init__(self):
        if not np.isfinite(self.a_dag) or self.a_dag <= 0:
            raise InvalidArgument(f"a_dag must be finite and positive, got {self.a_dag!r}")
        if int(self.n) != self.n or self.n < 1:
            raise InvalidArgument(f"cell count must be a positive integer, got {self.n!r}")

    @property
    def h(self) -> float:
        return self.a_dag / self.n

    @property
    def nodes(self) -> np.ndarray:
        # i * h rather than linspace so nodes match the step exactly
        nodes = np.arange(self.n + 1) * self.h
        nodes[-1] = self.a_dag
        return nodes

    @property
    def interior(self) -> np.ndarray:
        return self.nodes[1:]


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    n_steps: int

    def __post_init__(self):
        if not np.isfinite(self.horizon) or self.horizon <= 0:
            raise InvalidArgument(f"horizon must be positive, got {self.horizon!r}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise InvalidArgument(f"n_steps must be a positive integer, got {self.n_steps!r}")

    @classmethod
    def from_step(cls, horizon: float, tau: float) -> "TimeGrid":
        n_steps = int(round(horizon / tau))
        if n_steps < 1 or not np.isclose(n_steps * tau, horizon, rtol=1e-9, atol=0.0):
            raise InvalidArgument(f"tau={tau!r} does not divide horizon={horizon!r}")
        return cls(horizon, n_steps)

    @property
    def tau(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.tau


def build_age_grid(a_dag: float, n: int) -> AgeGrid:
    if not (np.isfinite(a_dag) and a_dag > 0):
        raise InvalidArgument(f"a_dag must be positive, got {a_dag!r}")
    if int(n) != n or n < 2:
        raise InvalidArgument(f"need at least 2 age cells, got {n!r}")
    return AgeGrid(float(a_dag), int(n))


def grid_for_step(a_dag: float, h: float) -> AgeGrid:
    """Grid with step ``h``; ``h`` must divide ``a_dag``."""
    n = int(round(a_dag / h))
    if n < 2 or not np.isclose(n * h, a_dag, rtol=1e-9, atol=0.0):
        raise InvalidArgument(f"h={h!r} does not divide a_dag={a_dag!r}")
    return build_age_grid(a_dag, n)


def _as_values(grid: AgeGrid, values, what: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.shape != (grid.n + 1,):
        raise InvalidArgument(f"{what}: expected {grid.n + 1} node values, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument(f"{what}: values must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LatticeFunction:
    grid: AgeGrid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _as_values(self.grid, self.values, "lattice function"))

    @classmethod
    def from_callable(cls, grid: AgeGrid, func) -> "LatticeFunction":
        return cls(grid, func(grid.nodes))

    @classmethod
    def constant(cls, grid: AgeGrid, c: float) -> "LatticeFunction":
        return cls(grid, np.full(grid.n + 1, float(c)))

    @property
    def interior(self) -> np.ndarray:
        return self.values[1:]

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass(frozen=True)
class MortalityCurve:
    grid: AgeGrid
    mu: np.ndarray

    def __post_init__(self):
        mu = _as_values(self.grid, self.mu, "mortality")
        if np.any(mu < 0):
            raise InvalidArgument("mortality rates must be nonnegative")
        object.__setattr__(self, "mu", mu)


@dataclass(frozen=True)
class SurvivalCurve:
    grid: AgeGrid
    pi: np.ndarray
    pi_floor: float = PI_FLOOR

    def __post_init__(self):
        pi = _as_values(self.grid, self.pi, "survival")
        if pi[0] != 1.0:
            raise InvalidArgument(f"survival must start at 1, got {pi[0]!r}")
        if np.any(np.diff(pi) > 0):
            raise InvalidArgument("survival must be non-increasing")
        if np.any(pi < self.pi_floor) or np.any(pi > 1.0):
            raise InvalidArgument(f"survival must lie in [{self.pi_floor}, 1]")
        object.__setattr__(self, "pi", pi)

    @classmethod
    def unit(cls, grid: AgeGrid) -> "SurvivalCurve":
        return cls(grid, np.ones(grid.n + 1))


_PAIRS = ("mm", "mf", "fm", "ff")


def _parent(key: str) -> str:
    return key[1]


@dataclass(frozen=True)
class MaternityModuli:
    """Survival-weighted birth kernels ``m[newborn][parent]``.

    Each function lives on the age grid of its parent sex.
    """

    mm: LatticeFunction
    mf: LatticeFunction
    fm: LatticeFunction
    ff: LatticeFunction

    def __post_init__(self):
        for key in _PAIRS:
            vals = getattr(self, key).values
            if np.any(vals < 0):
                raise InvalidArgument(f"maternity {key} must be nonnegative")
        if self.mm.grid != self.fm.grid or self.mf.grid != self.ff.grid:
            raise InvalidArgument("maternity functions must share their parent-sex grid")

    @property
    def grids(self) -> SexPair[AgeGrid]:
        return SexPair(self.mm.grid, self.ff.grid)

    def get(self, newborn: str, parent: str) -> LatticeFunction:
        return getattr(self, newborn + parent)

    def sup(self) -> float:
        """Largest lattice value over all four kernels."""
        return max(getattr(self, key).sup() for key in _PAIRS)

    def scaled(self, factor: float) -> "MaternityModuli":
        return MaternityModuli(
            *(LatticeFunction(getattr(self, k).grid, factor * getattr(self, k).values) for k in _PAIRS)
        )

    @classmethod
    def zeros(cls, grids: SexPair[AgeGrid]) -> "MaternityModuli":
        return cls(
            LatticeFunction.constant(grids.male, 0.0),
            LatticeFunction.constant(grids.female, 0.0),
            LatticeFunction.constant(grids.male, 0.0),
            LatticeFunction.constant(grids.female, 0.0),
        )


@dataclass(frozen=True)
class FertilityModuli:
    mm: LatticeFunction
    mf: LatticeFunction
    fm: LatticeFunction
    ff: LatticeFunction
    sex_ratio: float = 1.05

    def __post_init__(self):
        if not self.sex_ratio > 0:
            raise InvalidArgument(f"sex ratio must be positive, got {self.sex_ratio!r}")
        for key in _PAIRS:
            if np.any(getattr(self, key).values < 0):
                raise InvalidArgument(f"fertility {key} must be nonnegative")
        if self.mm.grid != self.fm.grid or self.mf.grid != self.ff.grid:
            raise InvalidArgument("fertility functions must share their parent-sex grid")

    @classmethod
    def from_maternal_schedule(
        cls, beta: LatticeFunction, male_grid: AgeGrid, sex_ratio: float = 1.05
    ) -> "FertilityModuli":
        """Split a birth-rate schedule by age of mother into sex-specific moduli."""
        if not sex_ratio > 0:
            raise InvalidArgument(f"sex ratio must be positive, got {sex_ratio!r}")
        s = float(sex_ratio)
        zero = LatticeFunction.constant(male_grid, 0.0)
        return cls(
            mm=zero,
            mf=LatticeFunction(beta.grid, s / (1.0 + s) * beta.values),
            fm=zero,
            ff=LatticeFunction(beta.grid, 1.0 / (1.0 + s) * beta.values),
            sex_ratio=s,
        )


Units = Literal["natural", "transformed"]


@dataclass(frozen=True)
class PopulationState:
    """Population at one instant, split into interior nodes and the age-0 value.

    ``units`` is ``"natural"`` for densities ``p`` (persons per year of age)
    and ``"transformed"`` for ``u = p / pi``.
    """

    time: float
    interior: SexPair
    boundary: SexPair
    grids: SexPair
    units: Units = "transformed"

    def __post_init__(self):
        if self.units not in ("natural", "transformed"):
            raise InvalidArgument(f"unknown units {self.units!r}")
        interior = []
        for sex, grid in self.grids.items():
            arr = np.array(self.interior[sex], dtype=float)
            if arr.shape != (grid.n,):
                raise InvalidArgument(f"{sex}: interior must have {grid.n} values, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise InvalidArgument(f"{sex}: interior values must be finite")
            arr.setflags(write=False)
            interior.append(arr)
        boundary = [float(b) for b in self.boundary]
        if not all(np.isfinite(boundary)):
            raise InvalidArgument("boundary values must be finite")
        object.__setattr__(self, "interior", SexPair(*interior))
        object.__setattr__(self, "boundary", SexPair(*boundary))

    @classmethod
    def from_lattice(cls, time: float, values: SexPair, units: Units = "natural") -> "PopulationState":
        """Build from full lattice functions (node 0 becomes the boundary value)."""
        return cls(
            time=time,
            interior=values.map(lambda lf: lf.values[1:]),
            boundary=values.map(lambda lf: lf.values[0]),
            grids=values.map(lambda lf: lf.grid),
            units=units,
        )

    @classmethod
    def from_vector(cls, time, vec, boundary, grids, units: Units = "transformed") -> "PopulationState":
        nm = grids.male.n
        return cls(time, SexPair(vec[:nm], vec[nm:]), SexPair(*boundary), grids, units)

    def full(self, sex: str) -> np.ndarray:
        return np.concatenate(([self.boundary[sex]], self.interior[sex]))

    def lattice(self, sex: str) -> LatticeFunction:
        return LatticeFunction(self.grids[sex], self.full(sex))

    def vector(self) -> np.ndarray:
        """Interior values, male block first."""
        return np.concatenate((self.interior.male, self.interior.female))


def discrete_l2_inner(u: LatticeFunction, v: LatticeFunction, range: str = "interior") -> float:
    if u.grid != v.grid:
        raise InvalidArgument("lattice functions live on different grids")
    if range == "interior":
        sl = slice(1, None)
    elif range == "full":
        sl = slice(None)
    else:
        raise InvalidArgument(f"range must be 'interior' or 'full', got {range!r}")
    return float(u.grid.h * np.dot(u.values[sl], v.values[sl]))


def backward_diff(u: LatticeFunction) -> np.ndarray:
    """``(u_k - u_{k-1}) / h`` on nodes ``1..n``."""
    return np.diff(u.values) / u.grid.h


def forward_diff(u: LatticeFunction) -> np.ndarray:
    """``(u_{k+1} - u_k) / h`` on nodes ``0..n-1``."""
    return np.diff(u.values) / u.grid.h


def survival_from_mortality(mu: MortalityCurve, pi_floor: float = PI_FLOOR) -> SurvivalCurve:
    """Survival ``exp(-int_0^a mu)`` with the cumulative integral by trapezoids."""
    rates = np.asarray(mu.mu, dtype=float)
    if np.any(rates < 0):
        raise InvalidArgument("mortality rates must be nonnegative")
    h = mu.grid.h
    cumulative = np.concatenate(([0.0], np.cumsum(0.5 * h * (rates[1:] + rates[:-1]))))
    pi = np.maximum(np.exp(-cumulative), pi_floor)
    return SurvivalCurve(mu.grid, pi, pi_floor)


def survival_from_life_table(qx, pi_floor: float = PI_FLOOR) -> SurvivalCurve:
    """Survival at single-year ages from annual death probabilities.

    ``qx[j]`` is the probability of dying between ages ``j`` and ``j + 1``;
    the result lives on ages ``0..len(qx)``.
    """
    q = np.asarray(qx, dtype=float)
    if q.ndim != 1 or q.size == 0:
        raise InvalidArgument("life table must be a non-empty 1-D sequence")
    bad = np.flatnonzero(~((q >= 0) & (q < 1)))
    if bad.size:
        raise InvalidArgument(f"qx must lie in [0, 1); age {bad[0]} has {q[bad[0]]!r}")
    grid = AgeGrid(float(q.size), q.size)
    pi = np.concatenate(([1.0], np.cumprod(1.0 - q)))
    return SurvivalCurve(grid, np.maximum(pi, pi_floor), pi_floor)


def _check_survival_grids(state: PopulationState, pi: SexPair) -> None:
    for sex, grid in state.grids.items():
        if pi[sex].grid != grid:
            raise InvalidArgument(f"{sex}: survival curve grid does not match the state grid")


def to_transformed(p: PopulationState, pi: SexPair) -> PopulationState:
    """``u = p / pi`` node by node."""
    if p.units != "natural":
        raise InvalidState("state is already in transformed units")
    _check_survival_grids(p, pi)
    return PopulationState(
        time=p.time,
        interior=SexPair(*(p.interior[s] / pi[s].pi[1:] for s in SEXES)),
        boundary=SexPair(*(p.boundary[s] / pi[s].pi[0] for s in SEXES)),
        grids=p.grids,
        units="transformed",
    )


def from_transformed(u: PopulationState, pi: SexPair) -> PopulationState:
    """``p = pi * u`` node by node."""
    if u.units != "transformed":
        raise InvalidState("state is already in natural units")
    _check_survival_grids(u, pi)
    return PopulationState(
        time=u.time,
        interior=SexPair(*(u.interior[s] * pi[s].pi[1:] for s in SEXES)),
        boundary=SexPair(*(u.boundary[s] * pi[s].pi[0] for s in SEXES)),
        grids=u.grids,
        units="natural",
    )


def maternity_from_fertility(beta: FertilityModuli, pi: SexPair) -> MaternityModuli:
    """Weight each fertility modulus by the survival of the parent sex."""
    kernels = {}
    for key in _PAIRS:
        b = getattr(beta, key)
        surv = pi[_parent(key)]
        if surv.grid != b.grid:
            raise InvalidArgument(f"fertility {key} and parent survival live on different grids")
        kernels[key] = LatticeFunction(b.grid, surv.pi * b.values)
    return MaternityModuli(**kernels)
