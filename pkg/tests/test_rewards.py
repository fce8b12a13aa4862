"""Reward sign conventions, the clean-sample identity, and target construction."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpgdiff.concepts import ReferenceSet
from dpgdiff.diffusion import (LatentCodec, forward_diffuse, make_schedule,
                               predict_x0, recon_objective)
from dpgdiff.numerics import RngStream
from dpgdiff.rewards import (FeatureEncoder, RewardSpec, discounted_target,
                             feature_sim_reward, look_forward_reward, mc_target,
                             recon_reward)


def refset_from(samples, token=0):
    return ReferenceSet(samples=[np.asarray(s, dtype=np.float64) for s in samples],
                        concept_token=token, domain="mixture2d")


class TestRewardSpec:
    def test_defaults_valid(self):
        spec = RewardSpec()
        assert spec.critic_kind == "look_forward"

    def test_composite_requires_base(self):
        with pytest.raises(ValueError, match="base"):
            RewardSpec(kind="composite", base=())
        spec = RewardSpec(kind="composite", base=("feature_sim", "recon"))
        assert spec.critic_kind == "feature_sim"

    @pytest.mark.parametrize("kwargs", [
        {"kind": "mystery"},
        {"lam": -0.1},
        {"gamma": 1.5},
        {"target_mode": "sarsa"},
        {"lf_weight_clip": 0.0},
        {"mc_horizon": 0},
        {"feature_t_frac": 0.0},
        {"kind": "composite", "base": ("mystery",)},
    ])
    def test_invalid_fields_rejected(self, kwargs):
        with pytest.raises(ValueError):
            RewardSpec(**kwargs)


class TestReconReward:
    def test_perfect_prediction_is_zero(self):
        z = np.array([1.0, -1.0])
        assert recon_reward(z, z.copy()) == 0.0

    def test_unit_example(self):
        assert recon_reward([1.0, 1.0], [0.0, 0.0]) == -1.0

    def test_definitional_link_to_objective(self, rng):
        for _ in range(20):
            z = rng.normal(size=6)
            z_hat = rng.normal(size=6)
            assert recon_reward(z, z_hat) == -recon_objective(z, z_hat)


class TestLookForwardReward:
    def test_perfect_prediction_is_zero(self, rng):
        s = make_schedule(50, 1e-3, 0.05)
        x0 = rng.normal(size=3)
        z = rng.normal(size=3)
        x_t = forward_diffuse(x0, 20, z, s)
        assert look_forward_reward(x0, x_t, z, 20, s) == pytest.approx(0.0, abs=1e-25)

    def test_weight_formula(self):
        # alpha_bar = 0.25 -> weight 3
        from dpgdiff.diffusion import DiffusionSchedule

        s = DiffusionSchedule(beta=np.array([0.75]), alpha=np.array([0.25]),
                              alpha_bar=np.array([0.25]))
        x0 = np.zeros(2)
        z = np.array([1.0, 0.0])
        x_t = forward_diffuse(x0, 0, z, s)
        r = look_forward_reward(x0, x_t, np.zeros(2), 0, s, clip=100.0)
        assert r == pytest.approx(-3.0 * 0.5)  # weight 3, mse(0, z) = 0.5

    def test_clip_binds(self):
        from dpgdiff.diffusion import DiffusionSchedule

        s = DiffusionSchedule(beta=np.array([0.96]), alpha=np.array([0.04]),
                              alpha_bar=np.array([0.04]))  # w = 24
        x0 = np.zeros(1)
        z = np.ones(1)
        x_t = forward_diffuse(x0, 0, z, s)
        assert look_forward_reward(x0, x_t, np.zeros(1), 0, s, clip=10.0) == \
            pytest.approx(-10.0)

    def test_invalid_clip_rejected(self):
        s = make_schedule(10, 0.01, 0.02)
        with pytest.raises(ValueError, match="clip"):
            look_forward_reward(np.ones(2), np.ones(2), np.ones(2), 0, s, clip=0.0)

    def test_equals_clean_sample_error_below_clip(self, rng):
        """Two-sided evaluation of the weight identity on 1000 instances."""
        s = make_schedule(100, 1e-4, 0.02)
        for i in range(1000):
            x0 = rng.normal(size=4) * 2
            z = rng.normal(size=4)
            z_hat = rng.normal(size=4)
            t = i % s.T
            x_t = forward_diffuse(x0, t, z, s)
            r = look_forward_reward(x0, x_t, z_hat, t, s, clip=1e12)
            direct = -float(np.mean((predict_x0(x_t, z_hat, t, s) - x0) ** 2))
            assert abs(r - direct) <= 1e-10 * max(abs(r), abs(direct), 1e-30)


class TestFeatureSimReward:
    def test_identical_to_single_reference_is_zero(self, rng):
        enc = FeatureEncoder(2, feature_dim=16, seed=3)
        ref = rng.normal(size=2)
        refs = refset_from([ref, ref, ref, ref])
        assert feature_sim_reward(ref, refs, enc) == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal_embedding_gives_minus_one(self):
        class OrthoEnc:
            def embed(self, x):
                x = np.atleast_2d(x)
                out = np.zeros((len(x), 2))
                out[:, 0] = x[:, 0] > 0
                out[:, 1] = x[:, 0] <= 0
                return out

        refs = refset_from([[1.0, 0.0]] * 4)
        assert feature_sim_reward(np.array([-1.0, 0.0]), refs, OrthoEnc()) == -1.0

    def test_two_references_equal_mean_of_pairwise(self, rng):
        enc = FeatureEncoder(2, feature_dim=8, seed=5)
        a, b = rng.normal(size=2), rng.normal(size=2)
        gen = rng.normal(size=2)
        both = refset_from([a, b, a, b])
        ra = feature_sim_reward(gen, refset_from([a] * 4), enc)
        rb = feature_sim_reward(gen, refset_from([b] * 4), enc)
        assert feature_sim_reward(gen, both, enc) == pytest.approx((ra + rb) / 2.0)

    def test_empty_reference_set_rejected(self):
        enc = FeatureEncoder(2, seed=1)
        with pytest.raises(ValueError, match="empty"):
            feature_sim_reward(np.zeros(2), [], enc)

    def test_range_bounds(self, rng):
        enc = FeatureEncoder(2, seed=7)
        refs = refset_from([rng.normal(size=2) for _ in range(5)])
        for _ in range(50):
            r = feature_sim_reward(rng.normal(size=2) * 3, refs, enc)
            assert -2.0 <= r <= 0.0

    def test_decodes_through_codec(self, rng):
        enc = FeatureEncoder(4, seed=9)
        codec = LatentCodec.linear(4, RngStream(2, "codec"))
        refs_data = [rng.normal(size=4) for _ in range(4)]
        refs = ReferenceSet(samples=refs_data, concept_token=0, domain="mixture2d")
        x0_data = refs_data[0]
        latent = codec.encode(x0_data)
        # decoding the latent recovers the data-space sample, so reward is 0
        assert feature_sim_reward(latent, refs, enc, codec) == pytest.approx(0.0, abs=1e-12)


class TestFeatureEncoder:
    def test_immutable_given_seed_and_unit_norm(self, rng):
        a = FeatureEncoder(3, feature_dim=12, seed=42)
        b = FeatureEncoder(3, feature_dim=12, seed=42)
        x = rng.normal(size=(10, 3))
        assert np.array_equal(a.embed(x), b.embed(x))
        norms = np.linalg.norm(a.embed(x), axis=1)
        assert np.allclose(norms, 1.0)

    def test_scale_invariance_of_similarity(self, rng):
        """Unit normalization makes the reward invariant to output rescaling."""
        enc = FeatureEncoder(2, seed=11)
        refs = refset_from([rng.normal(size=2) for _ in range(4)])
        x = rng.normal(size=2)
        r1 = feature_sim_reward(x, refs, enc)
        enc.w2 = enc.w2 * 3.7  # positive rescaling before normalization
        assert feature_sim_reward(x, refs, enc) == pytest.approx(r1, rel=1e-12)


class TestTargets:
    def test_mc_single_and_constant(self):
        assert mc_target([2.5]) == 2.5
        assert mc_target([1.0, 1.0, 1.0]) == 3.0

    def test_mc_matches_fold_oracle(self, rng):
        vals = list(rng.normal(size=17))
        acc = 0.0
        for v in vals:
            acc += v
        assert mc_target(vals) == pytest.approx(acc, rel=1e-12)

    def test_mc_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            mc_target([])

    def test_discounted_examples(self):
        assert discounted_target(1.0, 123.0, 0.0) == 1.0
        assert discounted_target(1.0, 1.0, 0.5) == 1.5

    def test_discounted_three_step_unroll(self):
        # rewards [1,1,1], gamma 0.5, terminal 0 -> head target 1.75
        q2 = discounted_target(1.0, 0.0, 0.5)
        q1 = discounted_target(1.0, q2, 0.5)
        q0 = discounted_target(1.0, q1, 0.5)
        assert q0 == 1.75

    def test_discounted_gamma_out_of_range(self):
        with pytest.raises(ValueError, match="gamma"):
            discounted_target(1.0, 1.0, 1.5)
        with pytest.raises(ValueError, match="gamma"):
            discounted_target(1.0, 1.0, -0.1)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=12), st.randoms())
def test_mc_target_permutation_invariant(values, pyrandom):
    shuffled = list(values)
    pyrandom.shuffle(shuffled)
    assert mc_target(values) == pytest.approx(mc_target(shuffled), rel=1e-9, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50))
def test_discounted_gamma_zero_is_immediate(immediate, next_q):
    assert discounted_target(immediate, next_q, 0.0) == immediate


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=5),
       st.lists(st.floats(-3, 3), min_size=2, max_size=5))
def test_all_rewards_nonpositive(a_vals, b_vals):
    n = min(len(a_vals), len(b_vals))
    z = np.array(a_vals[:n])
    z_hat = np.array(b_vals[:n])
    assert recon_reward(z, z_hat) <= 0.0
    s = make_schedule(10, 1e-3, 0.05)
    x0 = np.zeros(n)
    x_t = forward_diffuse(x0, 4, z, s)
    assert look_forward_reward(x0, x_t, z_hat, 4, s) <= 0.0
