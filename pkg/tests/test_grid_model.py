import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phigpr.errors import ContractError
from phigpr.grid_model import (GridParameters, GridState, drift, electrical_power, load_grid,
                               three_gen, three_gen_path)

angles = st.lists(st.floats(-math.pi, math.pi), min_size=3, max_size=3)


def brute_force_power(theta, p):
    out = np.zeros(p.n_gen)
    for k in range(p.n_gen):
        for i in range(p.n_gen):
            d = theta[k] - theta[i]
            out[k] += p.emf[k] * p.emf[i] * (p.conductance[k, i] * math.cos(d)
                                             + p.susceptance[k, i] * math.sin(d))
    return out


def single_gen(g=0.4, b=-1.2, e=1.1):
    return GridParameters(1, [2.0], [1.0], [e], [[g]], [[b]], 120.0, 0.0, [0.5], [0.0], [0.0])


class TestTableInstance:
    def test_values_match_system_table(self, params):
        # values copied from the published system-parameter table
        assert params.n_gen == 3
        assert params.inertia.tolist() == [13.64, 6.4, 3.01]
        assert params.damping.tolist() == [9.6, 2.5, 1.0]
        assert params.emf.tolist() == [1.0156, 1.0359, 1.0053]
        assert params.conductance.tolist() == [[0.8815, 0.3083, 0.2258],
                                               [0.3083, 0.4357, 0.2247],
                                               [0.2258, 0.2247, 0.2860]]
        assert params.susceptance.tolist() == [[-3.0273, 1.4904, 1.2088],
                                               [1.4904, -2.7397, 1.0764],
                                               [1.2088, 1.0764, -2.3770]]
        assert params.base_speed == 120.0 and params.sync_speed == 0.0
        assert params.wind_mean.tolist() == [0.7195, 1.63, 0.85]
        assert params.wind_sigma.tolist() == [0.05, 0.05, 0.0]
        assert params.wind_lambda[:2].tolist() == [1.8, 1.8]

    def test_wind_generators(self, params):
        assert params.wind_index.tolist() == [0, 1]

    def test_load_from_path_equals_builtin(self):
        assert load_grid(three_gen_path()).inertia.tolist() == three_gen().inertia.tolist()

    def test_arrays_are_read_only(self, params):
        with pytest.raises(ValueError):
            params.inertia[0] = 1.0


class TestValidation:
    def test_nonpositive_inertia(self):
        with pytest.raises(ContractError):
            single_gen().replace(inertia=[0.0])

    def test_negative_sigma(self):
        with pytest.raises(ContractError):
            single_gen().replace(wind_sigma=[-0.1], wind_lambda=[1.0])

    def test_lambda_needed_where_sigma_positive(self):
        with pytest.raises(ContractError):
            single_gen().replace(wind_sigma=[0.1], wind_lambda=[0.0])

    def test_matrix_shape(self):
        with pytest.raises(ContractError):
            single_gen().replace(conductance=[[1.0, 0.0]])

    def test_bad_config_file(self, tmp_path):
        p = tmp_path / "g.cfg"
        p.write_text("[generators]\nn_gen = 2\ninertia = 1, 2\n")
        with pytest.raises(ContractError):
            load_grid(p)


class TestElectricalPower:
    def test_zero_angles_generator_one(self, params):
        # cos = 1, sin = 0: P1 = E1 * sum_i E_i G_1i
        expected = params.emf[0] * (params.emf @ params.conductance[0])
        pe = electrical_power(np.zeros(3), params)
        assert pe[0] == pytest.approx(expected, abs=1e-12)
        assert pe[0] == pytest.approx(1.4641, abs=1e-4)

    def test_single_generator(self):
        p = single_gen(g=0.4, b=-1.2, e=1.1)
        for th in (-2.0, 0.0, 0.7):
            assert electrical_power([th], p)[0] == pytest.approx(1.1 ** 2 * 0.4, abs=1e-14)

    def test_initial_condition_against_double_sum(self, params):
        theta = np.array([0.0431, 0.4584, 0.2372])
        np.testing.assert_allclose(electrical_power(theta, params), brute_force_power(theta, params),
                                   rtol=0, atol=1e-13)

    def test_batched_matches_rows(self, params, rng):
        theta = rng.uniform(-1, 1, size=(5, 3))
        batched = electrical_power(theta, params)
        for row, out in zip(theta, batched):
            np.testing.assert_allclose(out, brute_force_power(row, params), atol=1e-13)

    def test_dimension_mismatch(self, params):
        with pytest.raises(ContractError):
            electrical_power(np.zeros(2), params)

    @given(angles, st.floats(-10, 10))
    def test_uniform_shift_invariance(self, theta, c):
        p = three_gen()
        np.testing.assert_allclose(electrical_power(np.array(theta) + c, p),
                                   electrical_power(np.array(theta), p), atol=1e-11)

    @given(angles)
    def test_lossless_network_sums_to_zero(self, theta):
        p = three_gen()
        p = p.replace(conductance=np.zeros((3, 3)))
        assert abs(electrical_power(np.array(theta), p).sum()) < 1e-12


class TestDrift:
    def test_equilibrium_gives_zero(self, params):
        theta = np.array([0.1, 0.5, 0.3])
        pe = electrical_power(theta, params)
        p = params.replace(wind_mean=pe)
        dth, dom = drift(GridState(theta, np.zeros(3)), p)
        assert np.all(dth == 0.0)
        np.testing.assert_allclose(dom, 0.0, atol=1e-15)

    def test_unit_speed_offset(self, params):
        dth, _ = drift(GridState(np.zeros(3), np.ones(3)), params)
        np.testing.assert_array_equal(dth, [120.0, 120.0, 120.0])

    def test_recomposed_from_parts(self, params, rng):
        s = GridState(rng.normal(size=3), rng.normal(scale=0.01, size=3), rng.normal(scale=0.05, size=3))
        _, dom = drift(s, params)
        expected = (params.wind_mean + s.wind_fluct - electrical_power(s.theta, params)
                    - params.damping * (s.omega - params.sync_speed)) / (2 * params.inertia)
        np.testing.assert_allclose(dom, expected, rtol=1e-14, atol=1e-16)

    def test_rejects_non_finite(self, params):
        with pytest.raises(ContractError):
            drift(GridState([0.0, np.nan, 0.0], np.zeros(3)), params)

    @settings(max_examples=30)
    @given(st.floats(-5, 5), st.lists(st.floats(-0.1, 0.1), min_size=3, max_size=3))
    def test_depends_on_speed_offset_only(self, ws, dev):
        p = three_gen()
        theta = np.array([0.0431, 0.4584, 0.2372])
        a = drift(GridState(theta, np.array(dev)), p)
        b = drift(GridState(theta, np.array(dev) + ws), p.replace(sync_speed=ws))
        np.testing.assert_allclose(a[0], b[0], atol=1e-9)
        np.testing.assert_allclose(a[1], b[1], atol=1e-12)
