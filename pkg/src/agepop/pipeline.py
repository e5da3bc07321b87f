"""End-to-end projection: load data, transform, step, back-transform, export."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import dataio
from .core import (
    FertilityModuli,
    PopulationState,
    SexPair,
    SurvivalCurve,
    TimeGrid,
    from_transformed,
    grid_for_step,
    maternity_from_fertility,
    survival_from_life_table,
    to_transformed,
)
from .errors import InvalidArgument
from .scheme import DiscreteOperators, SchemeConfig, Trajectory, assemble_operators, build_stepper, run_projection

log = logging.getLogger(__name__)


@dataclass
class Scenario:
    """Everything needed to step a projection, already on the age lattice."""

    grids: SexPair
    survival: SexPair
    fertility: FertilityModuli
    initial: PopulationState
    migration: SexPair
    ops: DiscreteOperators
    config: SchemeConfig
    time_grid: TimeGrid

    @property
    def forcing(self) -> np.ndarray:
        """Transformed migration ``g / pi`` on interior nodes, male block first."""
        return np.concatenate(
            [self.migration[s].interior / self.survival[s].pi[1:] for s in ("m", "f")]
        )


def survival_on_grid(qx: dataio.AnnualSeries, grid) -> SurvivalCurve:
    """Survival from a life table, extended with the last ``qx`` up to ``a_dag``."""
    years = int(np.ceil(grid.a_dag - 1e-9))
    table = survival_from_life_table(qx.padded(years).values)
    pi = np.interp(grid.nodes, table.grid.nodes, table.pi)
    pi[0] = 1.0
    return SurvivalCurve(grid, np.maximum(pi, table.pi_floor), table.pi_floor)


def prepare(cfg: dataio.ScenarioConfig, enforce: str = "warn") -> Scenario:
    population = dataio.load_population(cfg.population)
    life_table = dataio.load_life_table(cfg.life_table)
    fertility = dataio.load_fertility(cfg.fertility, cfg.sex_ratio)
    migration = dataio.load_migration(cfg.migration)

    grids = SexPair(grid_for_step(cfg.a_dag_m, cfg.h), grid_for_step(cfg.a_dag_f, cfg.h))
    survival = SexPair(*(survival_on_grid(life_table[s], grids[s]) for s in ("m", "f")))

    years_f = int(np.ceil(grids.female.a_dag))
    beta = dataio.interpolate_to_grid(fertility.total.padded(years_f, fill=0.0), grids.female)
    fert = FertilityModuli.from_maternal_schedule(beta, grids.male, cfg.sex_ratio)
    maternity = maternity_from_fertility(fert, survival)

    density = SexPair(*(dataio.interpolate_to_grid(population[s], grids[s]) for s in ("m", "f")))
    p0 = PopulationState.from_lattice(0.0, density, units="natural")
    flows = SexPair(
        *(
            dataio.interpolate_to_grid(migration[s].padded(int(np.ceil(grids[s].a_dag)), fill=0.0), grids[s])
            for s in ("m", "f")
        )
    )

    ops = assemble_operators(maternity, grids)
    time_grid = TimeGrid.from_step(cfg.horizon, cfg.tau)
    config = SchemeConfig.for_operators(ops, cfg.theta, time_grid.tau, enforce)
    return Scenario(
        grids=grids,
        survival=survival,
        fertility=fert,
        initial=to_transformed(p0, survival),
        migration=flows,
        ops=ops,
        config=config,
        time_grid=time_grid,
    )


def annual_output(traj: Trajectory, survival: SexPair, start_year: int = 0) -> dataio.ProjectionOutput:
    """Back-transform the states at whole years and restrict them to single-year ages."""
    steps_per_year = int(round(1.0 / traj.time_grid.tau))
    if not np.isclose(steps_per_year * traj.time_grid.tau, 1.0, rtol=1e-9):
        raise InvalidArgument(f"time step {traj.time_grid.tau!r} does not divide one year")
    years, pops = [], []
    for k in range(0, len(traj.states), steps_per_year):
        state = from_transformed(traj.states[k], survival)
        years.append(start_year + int(round(traj.times[k])))
        pops.append(dataio.restrict_to_annual(state))
    return dataio.ProjectionOutput(
        years=years,
        populations=pops,
        times=traj.times,
        energy=traj.energy,
        births=traj.births,
    )


def run(cfg: dataio.ScenarioConfig, enforce: str = "warn"):
    """Run a scenario; returns ``(scenario, trajectory, output)``."""
    scenario = prepare(cfg, enforce)
    ws = build_stepper(scenario.ops, scenario.config)
    log.info(
        "stepping %d unknowns over %d steps (theta=%g)",
        scenario.ops.size, scenario.time_grid.n_steps, scenario.config.theta,
    )
    traj = run_projection(
        scenario.initial, scenario.forcing, scenario.ops, scenario.config, scenario.time_grid, workspace=ws
    )
    return scenario, traj, annual_output(traj, scenario.survival, cfg.start_year)
