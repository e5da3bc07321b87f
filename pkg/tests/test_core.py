import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from agepop.core import (
    FertilityModuli,
    LatticeFunction,
    MaternityModuli,
    MortalityCurve,
    PopulationState,
    SexPair,
    SurvivalCurve,
    TimeGrid,
    backward_diff,
    build_age_grid,
    discrete_l2_inner,
    forward_diff,
    from_transformed,
    grid_for_step,
    maternity_from_fertility,
    survival_from_life_table,
    survival_from_mortality,
    to_transformed,
)
from agepop.errors import InvalidArgument, InvalidState

finite = st.floats(-1e3, 1e3, allow_nan=False)
# squares of these stay clear of underflow
normal = st.one_of(st.just(0.0), st.floats(1e-100, 1e3), st.floats(-1e3, -1e-100))


class TestGrids:
    def test_case_study_grid(self):
        grid = build_age_grid(110, 1320)
        assert grid.h == pytest.approx(1 / 12, rel=1e-15)
        assert grid.nodes[-1] == 110.0

    def test_unit_grid_nodes(self):
        np.testing.assert_array_equal(build_age_grid(1, 4).nodes, [0, 0.25, 0.5, 0.75, 1])

    def test_two_cells(self):
        assert build_age_grid(2, 2).h == 1.0

    @pytest.mark.parametrize("a_dag, n", [(0, 4), (-1, 4), (float("inf"), 4), (1, 1), (1, 0), (1, 2.5)])
    def test_rejects_bad_arguments(self, a_dag, n):
        with pytest.raises(InvalidArgument):
            build_age_grid(a_dag, n)

    @given(st.floats(0.1, 500), st.integers(2, 5000))
    def test_nodes_invariants(self, a_dag, n):
        grid = build_age_grid(a_dag, n)
        nodes = grid.nodes
        assert nodes[0] == 0.0 and nodes[-1] == a_dag
        assert np.all(np.diff(nodes) > 0)
        assert math.isclose(grid.n * grid.h, a_dag, rel_tol=1e-14)

    def test_grid_for_step(self):
        assert grid_for_step(110, 1 / 12).n == 1320
        with pytest.raises(InvalidArgument):
            grid_for_step(1.0, 0.3)

    def test_time_grid(self):
        tg = TimeGrid(2.0, 8)
        assert tg.tau == 0.25
        assert tg.times[0] == 0.0 and tg.times[-1] == 2.0
        assert TimeGrid.from_step(10, 1 / 12).n_steps == 120


class TestLatticeFunctions:
    def test_rejects_wrong_length_and_nan(self):
        grid = build_age_grid(1, 4)
        with pytest.raises(InvalidArgument):
            LatticeFunction(grid, np.ones(4))
        with pytest.raises(InvalidArgument):
            LatticeFunction(grid, [0, 1, np.nan, 0, 0])

    def test_values_are_read_only(self):
        lf = LatticeFunction.constant(build_age_grid(1, 4), 2.0)
        with pytest.raises(ValueError):
            lf.values[0] = 1.0

    def test_inner_of_ones(self):
        grid = build_age_grid(1, 4)
        one = LatticeFunction.constant(grid, 1.0)
        assert discrete_l2_inner(one, one) == 1.0
        assert discrete_l2_inner(one, one, "full") == 1.25

    def test_inner_of_zero(self):
        grid = build_age_grid(1, 4)
        zero = LatticeFunction.constant(grid, 0.0)
        assert discrete_l2_inner(zero, LatticeFunction.constant(grid, 3.0)) == 0.0

    def test_inner_matches_loop(self, rng):
        grid = build_age_grid(2.0, 7)
        u = LatticeFunction(grid, rng.normal(size=8))
        v = LatticeFunction(grid, rng.normal(size=8))
        total = 0.0
        for k in range(1, 8):
            total += u.values[k] * v.values[k]
        assert discrete_l2_inner(u, v) == pytest.approx(grid.h * total, rel=1e-15)

    def test_inner_grid_mismatch(self):
        with pytest.raises(InvalidArgument):
            discrete_l2_inner(
                LatticeFunction.constant(build_age_grid(1, 4), 1.0),
                LatticeFunction.constant(build_age_grid(1, 5), 1.0),
            )

    @given(arrays(float, 9, elements=finite), arrays(float, 9, elements=finite), finite)
    def test_inner_symmetric_bilinear(self, a, b, c):
        grid = build_age_grid(2.0, 8)
        u, v = LatticeFunction(grid, a), LatticeFunction(grid, b)
        assert discrete_l2_inner(u, v) == discrete_l2_inner(v, u)
        scaled = LatticeFunction(grid, c * a)
        assert discrete_l2_inner(scaled, v) == pytest.approx(
            c * discrete_l2_inner(u, v), rel=1e-9, abs=1e-6
        )

    @given(arrays(float, 9, elements=normal))
    def test_inner_positive(self, a):
        u = LatticeFunction(build_age_grid(2.0, 8), a)
        value = discrete_l2_inner(u, u, "full")
        assert value >= 0.0
        if np.any(a != 0):
            assert value > 0.0

    def test_differences_of_constant_and_identity(self):
        grid = build_age_grid(1, 5)
        const = LatticeFunction.constant(grid, 3.5)
        ident = LatticeFunction(grid, grid.nodes)
        np.testing.assert_array_equal(backward_diff(const), 0.0)
        np.testing.assert_array_equal(forward_diff(const), 0.0)
        np.testing.assert_allclose(backward_diff(ident), 1.0, rtol=1e-14)
        np.testing.assert_allclose(forward_diff(ident), 1.0, rtol=1e-14)

    def test_differences_match_formula(self, rng):
        grid = build_age_grid(1, 5)
        u = LatticeFunction(grid, rng.normal(size=6))
        back = [(u.values[k] - u.values[k - 1]) / grid.h for k in range(1, 6)]
        fwd = [(u.values[k + 1] - u.values[k]) / grid.h for k in range(0, 5)]
        np.testing.assert_array_equal(backward_diff(u), back)
        np.testing.assert_array_equal(forward_diff(u), fwd)

    @given(arrays(float, 7, elements=finite), finite)
    def test_differences_translation_invariant(self, a, c):
        grid = build_age_grid(3.0, 6)
        u = LatticeFunction(grid, a)
        shifted = LatticeFunction(grid, a + c)
        np.testing.assert_allclose(backward_diff(shifted), backward_diff(u), atol=1e-9)


class TestSurvival:
    def test_zero_mortality(self):
        grid = build_age_grid(2, 8)
        pi = survival_from_mortality(MortalityCurve(grid, np.zeros(9)))
        np.testing.assert_array_equal(pi.pi, 1.0)

    def test_constant_mortality_exact(self):
        grid = build_age_grid(4, 16)
        pi = survival_from_mortality(MortalityCurve(grid, np.full(17, 0.3)))
        np.testing.assert_allclose(pi.pi, np.exp(-0.3 * grid.nodes), rtol=1e-14)

    def test_linear_mortality_second_order(self):
        errs = []
        for n in (64, 128):
            grid = build_age_grid(1, n)
            pi = survival_from_mortality(MortalityCurve(grid, grid.nodes))
            errs.append(np.max(np.abs(pi.pi - np.exp(-grid.nodes**2 / 2))))
        fine = build_age_grid(1, 4096)
        ref = survival_from_mortality(MortalityCurve(fine, fine.nodes)).pi[::64]
        coarse = survival_from_mortality(MortalityCurve(build_age_grid(1, 64), build_age_grid(1, 64).nodes)).pi
        h = 1 / 64
        assert np.max(np.abs(coarse - ref)) <= h**2
        assert errs[0] <= h**2

    def test_negative_mortality_rejected(self):
        grid = build_age_grid(1, 2)
        with pytest.raises(InvalidArgument):
            MortalityCurve(grid, [0.0, -1.0, 0.0])

    def test_floor_applied(self):
        grid = build_age_grid(10, 10)
        pi = survival_from_mortality(MortalityCurve(grid, np.full(11, 10.0)))
        assert pi.pi[-1] == pi.pi_floor

    def test_life_table_examples(self):
        np.testing.assert_array_equal(survival_from_life_table([0.0, 0.0, 0.0]).pi, 1.0)
        np.testing.assert_array_equal(survival_from_life_table([0.5, 0.5]).pi, [1, 0.5, 0.25])

    def test_life_table_matches_product_loop(self, rng):
        q = rng.uniform(0, 0.2, 30)
        expected = [1.0]
        for value in q:
            expected.append(expected[-1] * (1 - value))
        np.testing.assert_array_equal(survival_from_life_table(q).pi, expected)

    @pytest.mark.parametrize("q", [[1.0], [-0.1], [0.2, 1.5]])
    def test_life_table_rejects(self, q):
        with pytest.raises(InvalidArgument):
            survival_from_life_table(q)

    def test_curve_invariants(self):
        grid = build_age_grid(1, 2)
        with pytest.raises(InvalidArgument):
            SurvivalCurve(grid, [0.9, 0.8, 0.7])
        with pytest.raises(InvalidArgument):
            SurvivalCurve(grid, [1.0, 0.7, 0.8])

    @given(arrays(float, 40, elements=st.floats(0, 0.99)))
    def test_life_table_monotone(self, q):
        pi = survival_from_life_table(q).pi
        assert np.all(np.diff(pi) <= 0)


def _pair_state(rng, grids, units="natural"):
    values = SexPair(*(LatticeFunction(g, rng.uniform(0, 100, g.n + 1)) for g in grids))
    return PopulationState.from_lattice(0.0, values, units)


class TestTransform:
    grids = SexPair(build_age_grid(2, 8), build_age_grid(3, 6))

    def _survival(self, rng):
        return self.grids.map(
            lambda g: SurvivalCurve(g, np.concatenate(([1.0], np.cumprod(rng.uniform(0.5, 1.0, g.n)))))
        )

    def test_unit_survival_is_identity(self, rng):
        p = _pair_state(rng, self.grids)
        u = to_transformed(p, self.grids.map(SurvivalCurve.unit))
        np.testing.assert_array_equal(u.vector(), p.vector())
        assert u.units == "transformed"

    def test_p_equal_pi_gives_ones(self, rng):
        pi = self._survival(rng)
        p = PopulationState.from_lattice(0.0, pi.map(lambda c: LatticeFunction(c.grid, c.pi)))
        u = to_transformed(p, pi)
        np.testing.assert_allclose(u.vector(), 1.0, rtol=1e-15)
        assert u.boundary.male == 1.0

    def test_round_trip(self, rng):
        pi = self._survival(rng)
        p = _pair_state(rng, self.grids)
        back = from_transformed(to_transformed(p, pi), pi)
        np.testing.assert_allclose(back.vector(), p.vector(), rtol=1e-14)
        assert back.units == "natural"

    def test_wrong_units(self, rng):
        pi = self._survival(rng)
        p = _pair_state(rng, self.grids)
        with pytest.raises(InvalidState):
            from_transformed(p, pi)
        with pytest.raises(InvalidState):
            to_transformed(to_transformed(p, pi), pi)

    def test_state_shape_checked(self):
        with pytest.raises(InvalidArgument):
            PopulationState(0.0, SexPair(np.ones(3), np.ones(6)), SexPair(0, 0), self.grids)


class TestMaternity:
    grids = SexPair(build_age_grid(2, 4), build_age_grid(3, 6))

    def test_zero_fertility(self):
        beta = FertilityModuli.from_maternal_schedule(
            LatticeFunction.constant(self.grids.female, 0.0), self.grids.male
        )
        mat = maternity_from_fertility(beta, self.grids.map(SurvivalCurve.unit))
        assert mat.sup() == 0.0

    def test_unit_survival_identity(self, rng):
        beta = FertilityModuli.from_maternal_schedule(
            LatticeFunction(self.grids.female, rng.uniform(0, 1, 7)), self.grids.male
        )
        mat = maternity_from_fertility(beta, self.grids.map(SurvivalCurve.unit))
        for key in ("mm", "mf", "fm", "ff"):
            np.testing.assert_array_equal(getattr(mat, key).values, getattr(beta, key).values)

    def test_parent_survival_weights(self, rng):
        pi_m = SurvivalCurve(self.grids.male, [1.0, 0.9, 0.8, 0.7, 0.6])
        pi_f = SurvivalCurve(self.grids.female, [1.0, 0.95, 0.9, 0.85, 0.8, 0.75, 0.7])
        moduli = [LatticeFunction(g, rng.uniform(0, 1, g.n + 1)) for g in
                  (self.grids.male, self.grids.female, self.grids.male, self.grids.female)]
        beta = FertilityModuli(*moduli)
        mat = maternity_from_fertility(beta, SexPair(pi_m, pi_f))
        np.testing.assert_array_equal(mat.mf.values, pi_f.pi * moduli[1].values)
        np.testing.assert_array_equal(mat.fm.values, pi_m.pi * moduli[2].values)
        np.testing.assert_array_equal(mat.mm.values, pi_m.pi * moduli[0].values)
        np.testing.assert_array_equal(mat.ff.values, pi_f.pi * moduli[3].values)

    def test_sex_ratio_split(self):
        beta = LatticeFunction.constant(self.grids.female, 1.0)
        fert = FertilityModuli.from_maternal_schedule(beta, self.grids.male, 1.05)
        assert fert.mf.values[0] == pytest.approx(1.05 / 2.05)
        assert fert.ff.values[0] == pytest.approx(1 / 2.05)
        assert fert.mm.sup() == fert.fm.sup() == 0.0

    def test_negative_rejected(self):
        g = self.grids
        bad = LatticeFunction(g.male, [0, -1, 0, 0, 0])
        zero_f = LatticeFunction.constant(g.female, 0.0)
        with pytest.raises(InvalidArgument):
            MaternityModuli(bad, zero_f, LatticeFunction.constant(g.male, 0.0), zero_f)
