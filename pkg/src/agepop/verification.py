"""Property suites and the self-convergence study behind ``agepop verify``
and ``agepop convergence``.

Each suite takes the operator assembler as a parameter so that a deliberately
broken assembly can be fed through the same checks.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, List

import numpy as np
from scipy.optimize import brentq

from .analysis import decay_report, verify_energy_decay
from .errors import AgepopError
from .core import (
    LatticeFunction,
    MaternityModuli,
    SexPair,
    TimeGrid,
    backward_diff,
    build_age_grid,
    forward_diff,
)
from .scheme import (
    SchemeConfig,
    assemble_operators,
    initial_state,
    interior_inner,
    omega0,
    run_projection,
    stability_window,
)

Assembler = Callable[[MaternityModuli, SexPair], object]


@dataclass
class SuiteResult:
    name: str
    passed: bool
    cases: int
    worst: float
    seconds: float
    detail: str = ""


def random_grids(rng, a_range=(0.5, 5.0), n_range=(3, 64)) -> SexPair:
    return SexPair(
        *(build_age_grid(rng.uniform(*a_range), int(rng.integers(n_range[0], n_range[1] + 1))) for _ in "mf")
    )


def random_maternity(rng, grids: SexPair, scale: float) -> MaternityModuli:
    def draw(grid):
        return LatticeFunction(grid, scale * rng.uniform(0.0, 1.0, grid.n + 1))

    return MaternityModuli(draw(grids.male), draw(grids.female), draw(grids.male), draw(grids.female))


def reference_generator(maternity: MaternityModuli, grids: SexPair, u_vec) -> np.ndarray:
    """Difference formula evaluated with explicit loops."""
    nm = grids.male.n
    blocks = {"m": list(u_vec[:nm]), "f": list(u_vec[nm:])}
    births = {}
    for child in "mf":
        total = 0.0
        for parent in "mf":
            grid = grids[parent]
            m = maternity.get(child, parent).values
            for i in range(1, grid.n + 1):
                total += grid.h * m[i] * blocks[parent][i - 1]
        births[child] = total
    out = []
    for sex in "mf":
        h = grids[sex].h
        u = blocks[sex]
        for i in range(len(u)):
            prev = births[sex] if i == 0 else u[i - 1]
            out.append(-(u[i] - prev) / h)
    return np.array(out), np.array([births["m"], births["f"]])


def summation_by_parts_suite(rng, cases: int = 1000, rtol: float = 1e-12) -> SuiteResult:
    """``<D u, v>_h = -<u, D+ v>_h + u_n v_n - u_0 v_0`` on random lattice pairs."""
    start = time.perf_counter()
    worst = 0.0
    for _ in range(cases):
        n = int(rng.integers(3, 65))
        grid = build_age_grid(rng.uniform(0.5, 5.0), n)
        u = LatticeFunction(grid, rng.normal(size=n + 1))
        v = LatticeFunction(grid, rng.normal(size=n + 1))
        h = grid.h
        lhs = h * np.dot(backward_diff(u), v.values[1:])
        rhs = -h * np.dot(u.values[:-1], forward_diff(v)) + u.values[-1] * v.values[-1] - u.values[0] * v.values[0]
        scale = h * np.sum(np.abs(backward_diff(u) * v.values[1:])) + h * np.sum(np.abs(u.values[:-1] * forward_diff(v)))
        worst = max(worst, abs(lhs - rhs) / max(scale, 1e-300))
    return SuiteResult("summation-by-parts", bool(worst <= rtol), cases, worst, time.perf_counter() - start)


def matrix_equivalence_suite(rng, cases: int = 100, rtol: float = 1e-13, assemble: Assembler = assemble_operators) -> SuiteResult:
    start = time.perf_counter()
    worst = 0.0
    for _ in range(cases):
        grids = random_grids(rng)
        mat = random_maternity(rng, grids, rng.uniform(0.0, 3.0))
        ops = assemble(mat, grids)
        u = rng.normal(size=grids.male.n + grids.female.n)
        ref_a, ref_b = reference_generator(mat, grids, u)
        err_a = np.max(np.abs(ops.A @ u - ref_a)) / max(np.max(np.abs(ref_a)), 1e-300)
        err_b = np.max(np.abs(ops.B @ u - ref_b)) / max(np.max(np.abs(ref_b)), 1e-300)
        worst = max(worst, err_a, err_b)
    return SuiteResult("matrix-equivalence", bool(worst <= rtol), cases, worst, time.perf_counter() - start)


def dissipativity_suite(rng, cases: int = 1000, rtol: float = 1e-10, assemble: Assembler = assemble_operators) -> SuiteResult:
    """Random ``(m, u)`` with ``u`` standard normal; reports the largest ``lhs / rhs``."""
    start = time.perf_counter()
    worst = -np.inf
    failures = 0
    for _ in range(cases):
        grids = random_grids(rng)
        mat = random_maternity(rng, grids, rng.uniform(0.0, 3.0))
        ops = assemble(mat, grids)
        u = rng.normal(size=ops.size)
        lhs = interior_inner(ops, ops.A @ u, u)
        rhs = omega0(mat, grids) * interior_inner(ops, u, u)
        worst = max(worst, lhs / rhs)
        failures += not (lhs <= rhs + rtol * abs(rhs))
    return SuiteResult(
        "dissipativity", bool(failures == 0), cases, worst, time.perf_counter() - start, f"{failures} violations"
    )


def transport_suite(assemble: Assembler = assemble_operators) -> SuiteResult:
    """With no births and ``tau = h`` the explicit step is an exact one-cell shift
    and the implicit step follows ``2 u_i^k = u_i^{k-1} + u_{i-1}^k``."""
    start = time.perf_counter()
    n = 4
    grids = SexPair(build_age_grid(1.0, n), build_age_grid(1.0, n))
    ops = assemble(MaternityModuli.zeros(grids), grids)
    u0 = np.arange(1.0, 2 * n + 1)
    tg = TimeGrid(1.0, n)
    worst = 0.0

    cfg = SchemeConfig(0.0, tg.tau, 1.0, "ignore")
    traj = run_projection(initial_state(u0, ops), None, ops, cfg, tg)
    expected = u0.reshape(2, n)
    for k, state in enumerate(traj.states):
        want = np.concatenate([np.concatenate((np.zeros(k), row[: n - k])) for row in expected])
        worst = max(worst, np.max(np.abs(state.vector() - want)))

    cfg = SchemeConfig(1.0, tg.tau, 1.0, "ignore")
    traj = run_projection(initial_state(u0, ops), None, ops, cfg, tg)
    prev = expected.copy()
    for state in traj.states[1:]:
        nxt = np.zeros_like(prev)
        for s in range(2):
            left = 0.0
            for i in range(n):
                nxt[s, i] = 0.5 * (prev[s, i] + left)
                left = nxt[s, i]
        worst = max(worst, np.max(np.abs(state.vector() - nxt.ravel())))
        prev = nxt
    return SuiteResult("transport", bool(worst <= 1e-12), 2 * n, worst, time.perf_counter() - start)


def stability_suite(rng, cases: int = 20, horizon: float = 2.0, assemble: Assembler = assemble_operators) -> SuiteResult:
    """Unforced runs at ``tau = tau_bar / 2`` against
    ``||u(t_k)|| <= sqrt(2) (1 + 4 tau) exp(4 T) ||u0||``; reports the largest ratio to the bound."""
    start = time.perf_counter()
    worst = 0.0
    failures = 0
    for case in range(cases):
        grids = random_grids(rng, a_range=(0.5, 2.0), n_range=(3, 32))
        mat = random_maternity(rng, grids, rng.uniform(0.0, 3.0))
        ops = assemble(mat, grids)
        theta = (0.5, 1.0)[case % 2]
        tau = 0.5 * stability_window(theta, omega0(mat, grids))
        tg = TimeGrid(horizon, int(np.ceil(horizon / tau)))
        cfg = SchemeConfig.for_operators(ops, theta, tg.tau, "ignore")
        u0 = rng.normal(size=ops.size)
        traj = run_projection(initial_state(u0, ops), None, ops, cfg, tg)
        norms = np.sqrt(2.0 * np.asarray(traj.energy))
        bound = np.sqrt(2.0) * (1.0 + 4.0 * tg.tau) * np.exp(4.0 * horizon) * norms[0]
        ratio = float(np.max(norms) / bound)
        worst = max(worst, ratio)
        failures += ratio > 1.0
    return SuiteResult("stability", failures == 0, cases, worst, time.perf_counter() - start, f"{failures} violations")


def admissible_maternity(rng, grids: SexPair):
    """Random maternity scaled to a random fraction of the decay threshold."""
    mat = random_maternity(rng, grids, 1.0)
    cond = max(decay_report(mat, grids).condition)
    return mat.scaled(np.sqrt(rng.uniform(0.05, 0.95) * 0.25 / cond))


def energy_decay_suite(rng, cases: int = 20, rtol: float = 1e-6, assemble: Assembler = assemble_operators, n: int = 40) -> SuiteResult:
    """Unforced runs over ``5 max(a_dag)`` for maternity meeting the decay condition."""
    start = time.perf_counter()
    worst = np.inf
    failures = 0
    for case in range(cases):
        grids = SexPair(build_age_grid(rng.uniform(1.0, 3.0), n), build_age_grid(rng.uniform(1.0, 3.0), n))
        mat = admissible_maternity(rng, grids)
        report = decay_report(mat, grids)
        ops = assemble(mat, grids)
        horizon = 5.0 * max(g.a_dag for g in grids)
        h = min(g.h for g in grids)
        tg = TimeGrid(horizon, int(np.ceil(horizon / h)))
        theta = (0.5, 1.0)[case % 2]
        cfg = SchemeConfig.for_operators(ops, theta, tg.tau, "ignore")
        u0 = rng.uniform(0.0, 1.0, ops.size)
        traj = run_projection(initial_state(u0, ops), None, ops, cfg, tg)
        check = verify_energy_decay(traj, report, rtol)
        worst = min(worst, check.worst_margin)
        failures += not check.passed
    return SuiteResult(
        "energy-decay", failures == 0, cases, worst, time.perf_counter() - start, f"{failures} violations"
    )


def _guarded(name: str, suite: Callable[[], SuiteResult]) -> SuiteResult:
    """Run a suite, reporting a solver breakdown as a failure of that suite."""
    start = time.perf_counter()
    try:
        return suite()
    except (AgepopError, ArithmeticError) as exc:
        return SuiteResult(name, False, 0, float("nan"), time.perf_counter() - start, f"error: {exc}")


def run_all(seed: int = 0, assemble: Assembler = assemble_operators) -> List[SuiteResult]:
    rng = np.random.default_rng(seed)
    suites = [
        ("summation-by-parts", lambda: summation_by_parts_suite(rng)),
        ("matrix-equivalence", lambda: matrix_equivalence_suite(rng, assemble=assemble)),
        ("dissipativity", lambda: dissipativity_suite(rng, assemble=assemble)),
        ("transport", lambda: transport_suite(assemble=assemble)),
        ("stability", lambda: stability_suite(rng, assemble=assemble)),
        ("energy-decay", lambda: energy_decay_suite(rng, assemble=assemble)),
    ]
    return [_guarded(name, suite) for name, suite in suites]


# --- self-convergence --------------------------------------------------------

#: Constant maternity for which ``u = exp(a - t)`` solves the unforced problem
#: on ``a_dag = 1`` (both sexes): ``2 c (e - 1) = 1``.
SMOOTH_MATERNITY = 1.0 / (2.0 * (np.e - 1.0))


def _scenario_ops(n: int):
    grids = SexPair(build_age_grid(1.0, n), build_age_grid(1.0, n))
    mat = MaternityModuli(
        *(LatticeFunction.constant(g, SMOOTH_MATERNITY) for g in (grids.male, grids.female, grids.male, grids.female))
    )
    return grids, assemble_operators(mat, grids)


def discrete_mode(n: int) -> tuple:
    """Eigenpair ``A v = lambda v`` of the discrete generator for the smooth scenario.

    Rows ``i >= 2`` force ``u_i = r^i`` with ``r = 1 / (1 + lambda h)``; the
    birth rows then fix ``lambda`` through ``2 c h sum_i r^i = 1``.
    """
    h = 1.0 / n
    i = np.arange(1, n + 1, dtype=float)

    def residual(lam):
        return 2.0 * SMOOTH_MATERNITY * h * np.sum(np.exp(-i * np.log1p(lam * h))) - 1.0

    lam = brentq(residual, -0.5 / h, 10.0, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return lam, np.exp(-i * np.log1p(lam * h))


def _solve_smooth(n: int, n_steps: int, theta: float, horizon: float, mode: str) -> np.ndarray:
    grids, ops = _scenario_ops(n)
    tg = TimeGrid(horizon, n_steps)
    if mode == "joint":
        ages = np.concatenate((grids.male.interior, grids.female.interior))
        u0 = np.exp(ages)
        profile = np.concatenate((np.sin(np.pi * grids.male.interior), np.cos(0.5 * np.pi * grids.female.interior)))

        def forcing(k):
            return tg.times[k] ** 2 * profile

        init = initial_state(u0, ops, boundary=(1.0, 1.0))
    else:
        _, mode_vec = discrete_mode(n)
        u0 = np.concatenate((mode_vec, mode_vec))

        def forcing(k):
            return np.sin(2.0 * np.pi * tg.times[k]) * u0

        init = initial_state(u0, ops)
    cfg = SchemeConfig.for_operators(ops, theta, tg.tau, "ignore")
    traj = run_projection(init, forcing, ops, cfg, tg)
    return np.array([np.concatenate((s.full("m"), s.full("f"))) for s in traj.states])


def _distance(coarse: np.ndarray, fine: np.ndarray, n: int, time_stride: int, age_stride: int) -> float:
    """``L-inf in time of the X^h norm`` after sampling ``fine`` on the coarse lattice."""
    nf = (fine.shape[1] // 2) - 1
    sub = fine[::time_stride]
    sampled = np.concatenate((sub[:, : nf + 1][:, ::age_stride], sub[:, nf + 1 :][:, ::age_stride]), axis=1)
    diff = coarse - sampled
    return float(np.max(np.sqrt((1.0 / n) * np.sum(diff * diff, axis=1))))


@dataclass
class ConvergenceTable:
    mode: str
    theta: float
    h: List[float] = field(default_factory=list)
    tau: List[float] = field(default_factory=list)
    differences: List[float] = field(default_factory=list)

    @property
    def ratios(self) -> List[float]:
        d = self.differences
        return [d[i] / d[i + 1] for i in range(len(d) - 1)]

    @property
    def orders(self) -> List[float]:
        return [float(np.log2(r)) for r in self.ratios]

    def format(self) -> str:
        lines = [f"mode={self.mode} theta={self.theta:g}", f"{'level':>5} {'h':>12} {'tau':>12} {'difference':>14} {'ratio':>8} {'order':>7}"]
        ratios = [None] + self.ratios
        for lvl, (h, tau, d) in enumerate(zip(self.h, self.tau, self.differences)):
            r = ratios[lvl]
            rs = f"{r:8.3f}" if r is not None else f"{'-':>8}"
            os_ = f"{np.log2(r):7.3f}" if r is not None else f"{'-':>7}"
            lines.append(f"{lvl:>5} {h:12.6g} {tau:12.6g} {d:14.6e} {rs} {os_}")
        return "\n".join(lines)


def convergence_study(
    levels: int,
    theta: float = 1.0,
    mode: str = "joint",
    base_n: int = 16,
    fine_n: int = 512,
    base_steps: int = 8,
    horizon: float = 1.0,
) -> ConvergenceTable:
    """Successive differences between refinement levels of the smooth scenario.

    ``mode="joint"`` halves ``h`` and ``tau`` together starting from
    ``h = tau = 1/base_n``.  ``mode="time"`` keeps ``h = 1/fine_n`` and halves
    only ``tau`` starting from ``horizon / base_steps``; its data follow a
    discrete eigenmode so the run is smooth in time.  ``levels`` counts the
    differences, so ``levels + 1`` solves are made.
    """
    if levels < 2:
        raise ValueError("need at least 2 refinement levels")
    table = ConvergenceTable(mode, theta)
    if mode == "joint":
        ns = [base_n * 2**lvl for lvl in range(levels + 1)]
        sols = [_solve_smooth(n, int(round(horizon * n)), theta, horizon, mode) for n in ns]
        for lvl in range(levels):
            table.h.append(1.0 / ns[lvl])
            table.tau.append(horizon / int(round(horizon * ns[lvl])))
            table.differences.append(_distance(sols[lvl], sols[lvl + 1], ns[lvl], 2, 2))
    elif mode == "time":
        steps = [base_steps * 2**lvl for lvl in range(levels + 1)]
        sols = [_solve_smooth(fine_n, k, theta, horizon, mode) for k in steps]
        for lvl in range(levels):
            table.h.append(1.0 / fine_n)
            table.tau.append(horizon / steps[lvl])
            table.differences.append(_distance(sols[lvl], sols[lvl + 1], fine_n, 2, 1))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return table
