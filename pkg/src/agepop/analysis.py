"""Energy functionals, decay diagnostics and error norms."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import SEXES, MaternityModuli, PopulationState, SexPair
from .errors import InvalidArgument, InvalidState, NotApplicable

#: The smallness bound on the weighted maternity sums.
DECAY_THRESHOLD = 0.25


def _require_transformed(state: PopulationState) -> None:
    if state.units != "transformed":
        raise InvalidState("energy functionals are defined on transformed units")


def energy(state: PopulationState) -> float:
    """Half the squared interior L2_h norm, summed over both sexes."""
    _require_transformed(state)
    total = 0.0
    for sex in SEXES:
        u = state.interior[sex]
        total += state.grids[sex].h * np.dot(u, u)
    return 0.5 * float(total)


def lyapunov(state: PopulationState) -> float:
    """Riemann sum of ``(2 a_dag - a) u^2`` over interior nodes."""
    _require_transformed(state)
    total = 0.0
    for sex in SEXES:
        grid = state.grids[sex]
        u = state.interior[sex]
        total += grid.h * np.dot(2.0 * grid.a_dag - grid.interior, u * u)
    return float(total)


@dataclass(frozen=True)
class SandwichReport:
    energy: float
    lyapunov: float
    upper: float
    holds: bool


def ef_sandwich(state: PopulationState, slack: float = 1e-12) -> SandwichReport:
    """Check ``0 <= E <= F <= 2 max(a_dag) E``.

    The upper inequality only holds when the mass of ``u`` sits near the
    oldest ages; in general ``F <= 4 max(a_dag) E`` is the sharp bound.
    """
    e = energy(state)
    f = lyapunov(state)
    upper = 2.0 * max(g.a_dag for g in state.grids) * e
    tol = slack * max(1.0, abs(upper))
    holds = (-tol <= e) and (e <= f + tol) and (f <= upper + tol)
    return SandwichReport(e, f, upper, holds)


@dataclass(frozen=True)
class DecayReport:
    condition: SexPair
    condition_met: bool
    alpha: float
    C: float
    beta0: float

    def bound(self, t) -> np.ndarray:
        """Energy ratio ``E(t) / E(0)`` allowed by the decay estimate."""
        return self.C * np.exp(-2.0 * self.alpha * np.asarray(t, dtype=float))


def decay_report(maternity: MaternityModuli, grids: SexPair) -> DecayReport:
    a = {s: grids[s].a_dag for s in SEXES}
    sup2 = {
        (child, parent): maternity.get(child, parent).sup() ** 2
        for child in SEXES
        for parent in SEXES
    }
    cond = {
        child: sum(a[child] * a[parent] * sup2[child, parent] for parent in SEXES)
        for child in SEXES
    }
    met = all(c < DECAY_THRESHOLD for c in cond.values())
    a_max = max(a.values())
    alpha = min(1.0 - 4.0 * c for c in cond.values()) / (2.0 * a_max) if met else 0.0
    beta0 = sum(2.0 * a[parent] * sup2[child, parent] for child in SEXES for parent in SEXES)
    return DecayReport(
        condition=SexPair(cond["m"], cond["f"]),
        condition_met=met,
        alpha=alpha,
        C=2.0 * a_max,
        beta0=beta0,
    )


@dataclass(frozen=True)
class DecayCheck:
    passed: bool
    ratios: np.ndarray
    bounds: np.ndarray

    @property
    def worst_margin(self) -> float:
        """Smallest ``bound - ratio`` over the run."""
        return float(np.min(self.bounds - self.ratios)) if self.ratios.size else np.inf


def verify_energy_decay(trajectory, report: DecayReport, rtol: float = 1e-6) -> DecayCheck:
    """Check ``E(t_k) <= C exp(-2 alpha t_k) E(0)`` along an unforced run."""
    if not report.condition_met:
        raise NotApplicable("maternity does not satisfy the decay condition")
    e = np.asarray(trajectory.energy, dtype=float)
    t = np.asarray(trajectory.times, dtype=float)
    e0 = e[0]
    bounds = report.bound(t)
    if e0 == 0.0:
        return DecayCheck(bool(np.all(e == 0.0)), np.zeros_like(e), bounds)
    ratios = e / e0
    return DecayCheck(bool(np.all(ratios <= bounds * (1.0 + rtol))), ratios, bounds)


@dataclass(frozen=True)
class SexErrors:
    l1: float
    l2: float
    linf: float
    rel_l1: float
    rel_l2: float
    rel_linf: float
    total_simulated: float
    total_reported: float

    @property
    def rel_total(self) -> float:
        return abs(self.total_simulated - self.total_reported) / abs(self.total_reported)


@dataclass(frozen=True)
class ErrorReport:
    male: SexErrors
    female: SexErrors

    def __getitem__(self, sex: str) -> SexErrors:
        return {"m": self.male, "f": self.female}[sex]


def _norms(x: np.ndarray):
    return np.sum(np.abs(x)), np.sqrt(np.sum(x * x)), np.max(np.abs(x))


def _rel(num, den):
    if den == 0:
        return 0.0 if num == 0 else np.inf
    return num / den


def _sex_errors(sim, rep) -> SexErrors:
    sim = np.asarray(sim, dtype=float)
    rep = np.asarray(rep, dtype=float)
    if sim.shape != rep.shape:
        raise InvalidArgument(f"series lengths differ: {sim.size} vs {rep.size}")
    if sim.size == 0:
        raise InvalidArgument("empty series")
    diff = _norms(sim - rep)
    ref = _norms(rep)
    return SexErrors(
        *map(float, diff),
        *(float(_rel(d, r)) for d, r in zip(diff, ref)),
        float(sim.sum()),
        float(rep.sum()),
    )


def error_norms(simulated: SexPair, reported: SexPair) -> ErrorReport:
    """Unweighted L1, L2 and Linf discrepancies over single-year ages."""
    return ErrorReport(
        _sex_errors(_values(simulated.male), _values(reported.male)),
        _sex_errors(_values(simulated.female), _values(reported.female)),
    )


def _values(series):
    return getattr(series, "values", series)
