import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phigpr.errors import ContractError
from phigpr.prior_stats import (MomentTable, StateChannel, assemble_joint, channel_values,
                                ensemble_moments, parse_channel, relative_channel_stats)
from phigpr.sde_sim import Ensemble, SimConfig, generate_ensemble

TH = [StateChannel("theta", k) for k in (1, 2, 3)]
OM = [StateChannel("omega", k) for k in (1, 2, 3)]
W1 = StateChannel("wind_fluct", 1)
DTH = StateChannel("theta_rel", 2, 1)
DOM = StateChannel("omega_rel", 2, 1)


def toy_ensemble(values):
    """Ensemble whose three state kinds all equal ``values`` (members, times, gens)."""
    values = np.asarray(values, dtype=float)
    t = np.arange(values.shape[1]) * 0.1
    return Ensemble(t, values, values.copy(), values.copy(), np.arange(values.shape[0], dtype=np.uint64))


class TestChannels:
    @pytest.mark.parametrize("label", ["theta_2-theta_1", "omega_3-omega_1", "pwind_1", "theta_3"])
    def test_label_round_trip(self, label):
        assert parse_channel(label).label == label

    def test_invalid(self):
        with pytest.raises(ContractError):
            StateChannel("theta_rel", 2, 2)
        with pytest.raises(ContractError):
            StateChannel("theta", 0)
        with pytest.raises(ContractError):
            parse_channel("pwind_2-pwind_1")
        with pytest.raises(ContractError):
            parse_channel("speed_1")

    def test_relative_values(self, small_ensemble):
        v = channel_values(small_ensemble, DTH)
        np.testing.assert_array_equal(v, small_ensemble.theta[..., 1] - small_ensemble.theta[..., 0])


class TestEnsembleMoments:
    def test_identical_members(self):
        member = np.random.default_rng(0).normal(size=(1, 6, 3))
        table = ensemble_moments(toy_ensemble(np.repeat(member, 4, axis=0)), [TH[0], DTH])
        assert np.all(table.cov(TH[0], TH[0]) == 0.0) and np.all(table.cov(TH[0], DTH) == 0.0)
        np.testing.assert_array_equal(table.mean(TH[0]), member[0, :, 0])

    def test_two_member_closed_form(self):
        rng = np.random.default_rng(1)
        vals = rng.normal(size=(2, 5, 3))
        table = ensemble_moments(toy_ensemble(vals), [TH[1]])
        a, b = vals[0, :, 1], vals[1, :, 1]
        m = (a + b) / 2
        expected = (np.outer(a - m, a - m) + np.outer(b - m, b - m)) / 1
        np.testing.assert_allclose(table.cov(TH[1], TH[1]), expected, rtol=1e-13, atol=1e-15)

    def test_wind_lag_correlation(self, params):
        ens = generate_ensemble(SimConfig(t_end=1.8, seed=31), params, 3000, record_interval=0.9)
        table = ensemble_moments(ens, [W1])
        k = table.cov(W1, W1)
        rho = k[0, 2] / math.sqrt(k[0, 0] * k[2, 2])
        se = (1 - math.exp(-2)) / math.sqrt(ens.n_members)
        assert abs(rho - math.exp(-1)) < 3 * se

    def test_covariance_transpose_symmetry(self, small_ensemble):
        table = ensemble_moments(small_ensemble, [TH[0], OM[1], W1])
        np.testing.assert_array_equal(table.cov(OM[1], TH[0]), table.cov(TH[0], OM[1]).T)
        for ch in table.channels:
            assert np.all(np.diag(table.cov(ch, ch)) >= 0)

    def test_sub_grid(self, small_ensemble):
        grid = small_ensemble.times[::4]
        table = ensemble_moments(small_ensemble, [TH[0]], grid=grid)
        full = ensemble_moments(small_ensemble, [TH[0]])
        np.testing.assert_allclose(table.cov(TH[0], TH[0]), full.cov(TH[0], TH[0])[::4, ::4],
                                   rtol=1e-12, atol=1e-20)

    def test_off_grid_rejected(self, small_ensemble):
        with pytest.raises(ContractError):
            ensemble_moments(small_ensemble, [TH[0]], grid=[0.0, 0.0101])

    @settings(max_examples=10, deadline=None)
    @given(st.randoms(use_true_random=False))
    def test_member_order_invariance(self, small_ensemble, rnd):
        perm = list(range(small_ensemble.n_members))
        rnd.shuffle(perm)
        a = ensemble_moments(small_ensemble, [DOM, W1])
        b = ensemble_moments(small_ensemble.select(np.array(perm)), [DOM, W1])
        np.testing.assert_allclose(b.cov(DOM, W1), a.cov(DOM, W1), rtol=1e-10, atol=1e-18)
        np.testing.assert_allclose(b.mean(DOM), a.mean(DOM), rtol=1e-12, atol=1e-16)

    def test_save_load_and_csv(self, small_ensemble, tmp_path):
        table = ensemble_moments(small_ensemble, [DTH, W1])
        back = MomentTable.load(table.save(tmp_path / "m.pgrc"))
        np.testing.assert_array_equal(back.cov(W1, DTH), table.cov(W1, DTH))
        assert back.channels == table.channels and back.n_mc == table.n_mc
        header = table.write_csv(tmp_path / "m.csv").read_text().splitlines()[0]
        assert header == "t,theta_2-theta_1_mean,theta_2-theta_1_std,pwind_1_mean,pwind_1_std"


class TestRelativeChannels:
    def test_same_index_rejected(self, small_ensemble):
        table = ensemble_moments(small_ensemble, TH)
        with pytest.raises(ContractError):
            relative_channel_stats(table, 1, 1)

    def test_missing_raw_channel(self, small_ensemble):
        with pytest.raises(ContractError):
            relative_channel_stats(ensemble_moments(small_ensemble, [TH[0]]), 2, 1)

    def test_identical_channels_zero_variance(self):
        vals = np.random.default_rng(2).normal(size=(10, 4, 3))
        vals[..., 1] = vals[..., 0]
        table = ensemble_moments(toy_ensemble(vals), TH)
        _, cov = relative_channel_stats(table, 2, 1)
        np.testing.assert_allclose(cov, 0.0, atol=1e-14)

    def test_linearity_matches_per_member(self, small_ensemble):
        ens = small_ensemble.select(np.arange(100))
        table = ensemble_moments(ens, OM + [DOM])
        mean, cov = relative_channel_stats(table, 2, 1, kind="omega")
        direct = table.cov(DOM, DOM)
        scale = np.max(np.abs(direct))
        assert np.max(np.abs(cov - direct)) / scale < 1e-12
        np.testing.assert_allclose(mean, table.mean(DOM), rtol=1e-12, atol=1e-18)


class TestAssembly:
    def test_scalar_case(self, small_ensemble):
        table = ensemble_moments(small_ensemble, [W1])
        t = small_ensemble.times[10]
        joint = assemble_joint(table, [W1], [t], 0.0, [W1], [t])
        assert joint.k_oo.shape == (1, 1)
        # only the relative 1e-10 jitter separates it from the prior variance
        assert joint.k_oo[0, 0] == pytest.approx(table.cov(W1, W1)[10, 10], rel=2e-10)

    def test_jitter_scales_with_largest_variance(self, small_ensemble):
        om = StateChannel("omega", 2)
        table = ensemble_moments(small_ensemble, [TH[1], om])
        idx = np.arange(1, 20)
        joint = assemble_joint(table, [TH[1], om], small_ensemble.times[idx], 0.0, [], [])
        n = len(idx)
        largest = max(np.diag(table.cov(c, c))[idx].max() for c in (TH[1], om))
        for i, ch in enumerate((TH[1], om)):
            var = np.diag(table.cov(ch, ch))[idx]
            added = np.diag(joint.k_oo)[i * n:(i + 1) * n] - var
            np.testing.assert_allclose(added, 1e-10 * largest, rtol=1e-3)

    def test_theta_observed_size(self, small_ensemble):
        # the full experiment observes 3 angles at 167 times; the same count logic on a 3 s grid
        table = ensemble_moments(small_ensemble, TH + [DOM])
        obs_t = np.arange(0, 61) * 0.05
        joint = assemble_joint(table, TH, obs_t, 0.0, [DOM], small_ensemble.times[1:])
        assert joint.k_oo.shape == (3 * 61, 3 * 61)
        assert joint.k_ot.shape == (183, len(small_ensemble.times) - 1)
        assert joint.obs_layout[61] == (TH[1], 0.0)

    def test_observation_count_for_experiment_window(self):
        from phigpr.harness import ObservationPlan
        assert len(ObservationPlan(("theta",), 0.05, 8.3375).times()) == 167

    def test_channel_swap_permutes_blocks(self, small_ensemble):
        table = ensemble_moments(small_ensemble, [TH[0], OM[1]])
        t = small_ensemble.times[[4, 8, 12]]
        a = assemble_joint(table, [TH[0], OM[1]], t, 0.01, [TH[0]], t)
        b = assemble_joint(table, [OM[1], TH[0]], t, 0.01, [TH[0]], t)
        perm = np.r_[3:6, 0:3]
        np.testing.assert_array_equal(b.k_oo, a.k_oo[np.ix_(perm, perm)])
        np.testing.assert_array_equal(b.k_ot, a.k_ot[perm])

    def test_noise_only_on_observed_block(self, small_ensemble):
        table = ensemble_moments(small_ensemble, [OM[0]])
        t = small_ensemble.times[5:9]
        joint = assemble_joint(table, [OM[0]], t, 0.3, [OM[0]], t)
        k = table.cov(OM[0], OM[0])[5:9, 5:9]
        np.testing.assert_allclose(joint.k_oo, k + 0.09 * np.eye(4), rtol=1e-12)
        np.testing.assert_allclose(joint.k_tt, k, rtol=1e-12)
        assert np.all(np.diag(joint.k_oo) >= 0.09)

    def test_errors(self, small_ensemble):
        table = ensemble_moments(small_ensemble, [OM[0]])
        with pytest.raises(ContractError):
            assemble_joint(table, [], [0.1], 0.0, [OM[0]], [0.1])
        with pytest.raises(ContractError):
            assemble_joint(table, [OM[0]], [0.1234], 0.0, [OM[0]], [0.1])
        with pytest.raises(ContractError):
            assemble_joint(table, [OM[1]], [0.1], 0.0, [OM[0]], [0.1])

    def test_positive_definite_with_noise(self, small_ensemble):
        table = ensemble_moments(small_ensemble, TH + OM)
        t = np.arange(0, 61) * 0.05
        joint = assemble_joint(table, TH + OM, t, 1e-4, [DTH], t)
        assert np.min(np.linalg.eigvalsh(joint.k_oo)) > 0
        np.testing.assert_array_equal(joint.k_oo, joint.k_oo.T)

    @settings(max_examples=15, deadline=None)
    @given(st.lists(st.sampled_from(["theta_1", "omega_2", "pwind_1", "theta_3-theta_1"]),
                    min_size=1, max_size=3, unique=True),
           st.lists(st.integers(0, 120), min_size=1, max_size=8, unique=True))
    def test_target_covariance_symmetric_psd(self, small_ensemble, labels, idx):
        chans = [parse_channel(s) for s in labels]
        table = ensemble_moments(small_ensemble, TH + [OM[1], W1])
        times = small_ensemble.times[sorted(idx)]
        joint = assemble_joint(table, [TH[0]], times[:1], 0.0, chans, times)
        np.testing.assert_array_equal(joint.k_tt, joint.k_tt.T)
        scale = max(float(np.max(np.abs(joint.k_tt))), 1e-300)
        assert np.min(np.linalg.eigvalsh(joint.k_tt)) > -1e-10 * scale


@pytest.mark.slow
def test_prior_std_converges_with_ensemble_size(params):
    """Doubling the ensemble from 2000 to 4000 changes the std curves by < 5% RMS."""
    chans = [DTH, DOM, W1]
    rms = []
    for rep in range(5):
        cfg = SimConfig(seed=1000 + rep)
        ens = generate_ensemble(cfg, params, 4000, record_interval=0.1)
        small = ensemble_moments(ens.select(np.arange(2000)), chans)
        big = ensemble_moments(ens, chans)
        for ch in chans:
            s2, s4 = small.std(ch)[1:], big.std(ch)[1:]
            rms.append(np.sqrt(np.mean(((s2 - s4) / s4) ** 2)))
    assert np.mean(rms) < 0.05
