"""Discrete generator, birth operator and the theta-method stepper.

Interior unknowns are stacked male nodes ``1..N_m`` first, then female
nodes ``1..N_f``.  The generator acts as

    [A u]_{s,1} = -(u_{s,1} - B_s u) / h_s
    [A u]_{s,i} = -(u_{s,i} - u_{s,i-1}) / h_s,   i >= 2

with ``B_s u = sum_p h_p sum_i m_{sp}(a_{p,i}) u_{p,i}`` the births of sex
``s``.  Hence ``A = T + U diag(1/h) B`` where ``T`` is lower bidiagonal and
``U`` selects the first row of each block.  The stepping matrix
``(1/tau) I - theta A`` inherits this bidiagonal-plus-two-rows structure and
is solved with a rank-2 Woodbury correction around a banded solve.
"""
from __future__ import annotations

import logging
import warnings
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .core import AgeGrid, MaternityModuli, PopulationState, SexPair, TimeGrid
from .errors import FactorizationFailed, InvalidArgument, InvalidState, NotApplicable, StabilityWarning

log = logging.getLogger(__name__)

#: Grids up to this many unknowns may use the dense LU fallback.
DENSE_LIMIT = 2 * 64


def omega0(maternity: MaternityModuli, grids: SexPair) -> float:
    """``max{a_m, a_f, M^2 / 2}`` with ``M`` the largest maternity lattice value."""
    big_m = maternity.sup()
    return max(grids.male.a_dag, grids.female.a_dag, 0.5 * big_m**2)


def stability_window(theta: float, omega0: float) -> float:
    """Sufficient step bound ``1 / (2 theta omega0)`` for ``theta >= 1/2``."""
    if not 0.5 <= theta <= 1.0:
        raise NotApplicable(f"stability window is defined for theta in [1/2, 1], got {theta!r}")
    if not omega0 > 0:
        raise InvalidArgument(f"omega0 must be positive, got {omega0!r}")
    return 1.0 / (2.0 * theta * omega0)


@dataclass(frozen=True)
class DiscreteOperators:
    A: sp.csr_matrix
    B: np.ndarray
    T: sp.csr_matrix
    grids: SexPair
    maternity: MaternityModuli

    @property
    def size(self) -> int:
        return self.grids.male.n + self.grids.female.n

    @property
    def offsets(self) -> tuple:
        """Positions of the first interior node of each sex in the stacked vector."""
        return (0, self.grids.male.n)

    @property
    def steps(self) -> np.ndarray:
        return np.array([self.grids.male.h, self.grids.female.h])

    def dense(self) -> np.ndarray:
        return self.A.toarray()

    def births(self, u_vec: np.ndarray) -> np.ndarray:
        return self.B @ u_vec

    def split(self, u_vec: np.ndarray) -> SexPair:
        nm = self.grids.male.n
        return SexPair(u_vec[:nm], u_vec[nm:])


def _check_grids(maternity: MaternityModuli, grids: SexPair) -> None:
    if maternity.grids.male != grids.male or maternity.grids.female != grids.female:
        raise InvalidArgument("maternity moduli are sampled on different grids than requested")


def assemble_operators(maternity: MaternityModuli, grids: SexPair) -> DiscreteOperators:
    _check_grids(maternity, grids)
    nm, nf = grids.male.n, grids.female.n
    size = nm + nf
    h = np.array([grids.male.h, grids.female.h])

    # B rows: Riemann weights h_parent * m(a_parent,i) over interior nodes
    B = np.zeros((2, size))
    for row, newborn in enumerate(("m", "f")):
        B[row, :nm] = grids.male.h * maternity.get(newborn, "m").interior
        B[row, nm:] = grids.female.h * maternity.get(newborn, "f").interior

    inv_h = np.concatenate((np.full(nm, 1.0 / h[0]), np.full(nf, 1.0 / h[1])))
    sub = inv_h[1:].copy()
    sub[nm - 1] = 0.0  # no coupling from the last male node into the first female node
    T = sp.diags([-inv_h, sub], [0, -1], shape=(size, size), format="csr")

    U = sp.csr_matrix((np.ones(2), ([0, nm], [0, 1])), shape=(size, 2))
    A = (T + U @ sp.csr_matrix(B / h[:, None])).tocsr()
    A.sort_indices()
    return DiscreteOperators(A=A, B=B, T=T, grids=grids, maternity=maternity)


def apply_generator(ops: DiscreteOperators, u_vec: np.ndarray) -> np.ndarray:
    """Generator applied by the difference formula, without the matrix."""
    u_vec = np.asarray(u_vec, dtype=float)
    births = ops.B @ u_vec
    out = np.empty_like(u_vec)
    for row, (start, grid) in enumerate(zip(ops.offsets, ops.grids)):
        block = u_vec[start : start + grid.n]
        lagged = np.concatenate(([births[row]], block[:-1]))
        out[start : start + grid.n] = -(block - lagged) / grid.h
    return out


@dataclass(frozen=True)
class DissipativityReport:
    lhs: float
    rhs: float
    holds: bool


def interior_inner(ops: DiscreteOperators, u_vec, v_vec) -> float:
    """h-weighted inner product on the stacked interior space."""
    nm = ops.grids.male.n
    return float(
        ops.grids.male.h * np.dot(u_vec[:nm], v_vec[:nm])
        + ops.grids.female.h * np.dot(u_vec[nm:], v_vec[nm:])
    )


def dissipativity_check(ops: DiscreteOperators, u_vec, rtol: float = 1e-10) -> DissipativityReport:
    """Compare ``<A u, u>`` against ``omega0 ||u||^2``."""
    u_vec = np.asarray(u_vec, dtype=float)
    if u_vec.shape != (ops.size,):
        raise InvalidArgument(f"expected {ops.size} interior values, got {u_vec.shape}")
    lhs = interior_inner(ops, ops.A @ u_vec, u_vec)
    rhs = omega0(ops.maternity, ops.grids) * interior_inner(ops, u_vec, u_vec)
    return DissipativityReport(lhs, rhs, lhs <= rhs + rtol * abs(rhs))


STABILITY_POLICIES = ("warn", "raise", "ignore")


@dataclass(frozen=True)
class SchemeConfig:
    theta: float
    tau: float
    omega0: float
    enforce_stability_window: str = "warn"

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise InvalidArgument(f"theta must lie in [0, 1], got {self.theta!r}")
        if not self.tau > 0:
            raise InvalidArgument(f"tau must be positive, got {self.tau!r}")
        if self.enforce_stability_window not in STABILITY_POLICIES:
            raise InvalidArgument(f"unknown stability policy {self.enforce_stability_window!r}")

    @classmethod
    def for_operators(cls, ops: DiscreteOperators, theta: float, tau: float, enforce="warn") -> "SchemeConfig":
        return cls(theta, tau, omega0(ops.maternity, ops.grids), enforce)

    @property
    def tau_bar(self) -> Optional[float]:
        if self.theta < 0.5:
            return None
        return stability_window(self.theta, self.omega0)

    @property
    def within_window(self) -> Optional[bool]:
        bar = self.tau_bar
        return None if bar is None else self.tau < bar


class StepperWorkspace:
    """Factorized ``H1 = (1/tau) I - theta A`` and the explicit part ``H2``.

    ``solver="bordered"`` factors the lower-bidiagonal part once and applies a
    rank-2 Woodbury correction for the two birth rows; ``solver="dense"``
    runs a dense LU and is meant for cross-checks on small grids.
    """

    def __init__(self, ops: DiscreteOperators, config: SchemeConfig, solver: str = "bordered"):
        self.ops = ops
        self.config = config
        self.solver = solver
        tau, theta = config.tau, config.theta
        size = ops.size
        self.H2 = (sp.identity(size, format="csr") / tau + (1.0 - theta) * ops.A).tocsr()

        if solver == "bordered":
            T = ops.T
            diag = 1.0 / tau - theta * T.diagonal()
            sub = -theta * T.diagonal(-1)
            if np.any(diag == 0) or not np.all(np.isfinite(diag)):
                raise FactorizationFailed(tau, theta, "zero pivot in the bidiagonal part")
            self._banded = np.zeros((2, size))
            self._banded[0] = diag
            self._banded[1, :-1] = sub
            rows = ops.offsets
            U = np.zeros((size, 2))
            U[rows[0], 0] = 1.0
            U[rows[1], 1] = 1.0
            self._W = ops.B / ops.steps[:, None]  # A = T + U @ W
            self._Z = self._lower_solve(U)
            cap = np.eye(2) - theta * self._W @ self._Z
            if abs(np.linalg.det(cap)) <= 1e-14 * max(1.0, np.abs(cap).max()) ** 2:
                raise FactorizationFailed(tau, theta, "singular birth-row capacitance matrix")
            self._cap = scipy.linalg.lu_factor(cap)
        elif solver == "dense":
            H1 = np.eye(size) / tau - theta * ops.dense()
            with warnings.catch_warnings():
                warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
                try:
                    self._lu = scipy.linalg.lu_factor(H1)
                except (scipy.linalg.LinAlgWarning, np.linalg.LinAlgError) as exc:
                    raise FactorizationFailed(tau, theta, str(exc)) from exc
            if np.any(np.diag(self._lu[0]) == 0):
                raise FactorizationFailed(tau, theta, "zero pivot")
        else:
            raise InvalidArgument(f"unknown solver {solver!r}")

    def _lower_solve(self, rhs: np.ndarray) -> np.ndarray:
        return scipy.linalg.solve_banded((1, 0), self._banded, rhs, check_finite=False)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``H1 x = rhs``."""
        if self.solver == "dense":
            return scipy.linalg.lu_solve(self._lu, rhs, check_finite=False)
        y = self._lower_solve(rhs)
        corr = scipy.linalg.lu_solve(self._cap, self.config.theta * (self._W @ y), check_finite=False)
        return y + self._Z @ corr

    def h1_matvec(self, x: np.ndarray) -> np.ndarray:
        return x / self.config.tau - self.config.theta * (self.ops.A @ x)


def format_step(x: float) -> str:
    """Show ``x`` as a small fraction such as ``1/110`` when it is one."""
    frac = Fraction(x).limit_denominator(100000)
    if frac.denominator > 1 and abs(float(frac) - x) <= 1e-12 * abs(x):
        return f"{frac.numerator}/{frac.denominator}"
    return f"{x:.6g}"


def build_stepper(ops: DiscreteOperators, config: SchemeConfig, solver: str = "bordered") -> StepperWorkspace:
    if solver == "dense" and ops.size > DENSE_LIMIT:
        raise InvalidArgument(f"dense solver is limited to {DENSE_LIMIT} unknowns, got {ops.size}")
    bar = config.tau_bar
    if bar is not None and config.tau >= bar:
        msg = (
            f"tau = {format_step(config.tau)} exceeds the stability window "
            f"tau_bar = {format_step(bar)} (omega0 = {config.omega0:.6g})"
        )
        if config.enforce_stability_window == "raise":
            raise InvalidArgument(msg)
        if config.enforce_stability_window == "warn":
            warnings.warn(msg, StabilityWarning, stacklevel=2)
    return StepperWorkspace(ops, config, solver)


def theta_step(ws: StepperWorkspace, ops: DiscreteOperators, u_prev, f_prev, f_next):
    """Advance one step; returns the new interior vector and the birth pair."""
    size = ops.size
    u_prev = np.asarray(u_prev, dtype=float)
    f_prev = np.asarray(f_prev, dtype=float)
    f_next = np.asarray(f_next, dtype=float)
    for name, arr in (("u_prev", u_prev), ("f_prev", f_prev), ("f_next", f_next)):
        if arr.shape != (size,):
            raise InvalidArgument(f"{name}: expected {size} interior values, got {arr.shape}")
    theta = ws.config.theta
    rhs = ws.H2 @ u_prev + theta * f_next + (1.0 - theta) * f_prev
    u_next = ws.solve(rhs)
    return u_next, ops.B @ u_next


@dataclass
class Trajectory:
    time_grid: TimeGrid
    states: list = field(default_factory=list)
    energy: np.ndarray = None
    births: np.ndarray = None

    @property
    def times(self) -> np.ndarray:
        return self.time_grid.times

    def vectors(self) -> np.ndarray:
        return np.array([s.vector() for s in self.states])


def _forcing_source(forcing, size: int, n_steps: int) -> Callable[[int], np.ndarray]:
    if forcing is None:
        zero = np.zeros(size)
        return lambda k: zero
    if callable(forcing):
        return lambda k: np.asarray(forcing(k), dtype=float)
    arr = np.asarray(forcing, dtype=float)
    if arr.shape == (size,):
        return lambda k: arr
    if arr.shape == (n_steps + 1, size):
        return lambda k: arr[k]
    raise InvalidArgument(f"forcing must have shape ({size},) or ({n_steps + 1}, {size}), got {arr.shape}")


def run_projection(
    initial: PopulationState,
    forcing,
    ops: DiscreteOperators,
    config: SchemeConfig,
    time_grid: TimeGrid,
    solver: str = "bordered",
    workspace: Optional[StepperWorkspace] = None,
) -> Trajectory:
    """Step the transformed system over ``time_grid``.

    ``forcing`` is ``None`` (zero), one interior vector held constant, an
    array of shape ``(n_steps + 1, N)`` sampled at the lattice times, or a
    callable ``k -> vector``.
    """
    if initial.units != "transformed":
        raise InvalidState("projection runs on transformed units")
    if initial.grids != ops.grids:
        raise InvalidArgument("initial state and operators use different grids")
    if not np.isclose(time_grid.tau, config.tau, rtol=1e-12, atol=0.0):
        raise InvalidArgument(f"time grid step {time_grid.tau!r} differs from configured tau {config.tau!r}")
    ws = workspace or build_stepper(ops, config, solver)
    f_at = _forcing_source(forcing, ops.size, time_grid.n_steps)
    times = time_grid.times
    grids = ops.grids

    u = initial.vector()
    states = [initial]
    births = np.empty((time_grid.n_steps + 1, 2))
    births[0] = tuple(initial.boundary)
    energy = np.empty(time_grid.n_steps + 1)
    energy[0] = 0.5 * interior_inner(ops, u, u)
    f_prev = f_at(0)
    for k in range(1, time_grid.n_steps + 1):
        f_next = f_at(k)
        u, b = theta_step(ws, ops, u, f_prev, f_next)
        if not np.all(np.isfinite(u)):
            raise FactorizationFailed(config.tau, config.theta, f"non-finite solution at step {k}")
        states.append(PopulationState.from_vector(times[k], u, b, grids, "transformed"))
        births[k] = b
        energy[k] = 0.5 * interior_inner(ops, u, u)
        f_prev = f_next
    return Trajectory(time_grid, states, energy, births)


def initial_state(u_vec: np.ndarray, ops: DiscreteOperators, boundary: Optional[Sequence[float]] = None) -> PopulationState:
    """Transformed state at t=0; the age-0 values default to the birth law."""
    if boundary is None:
        boundary = ops.B @ u_vec
    return PopulationState.from_vector(0.0, u_vec, boundary, ops.grids, "transformed")
