"""Policy/critic forward contracts, condition embeddings, gradients, checkpoints."""

import numpy as np
import pytest

from dpgdiff.networks import (ConditionEmbedding, ConditionTable, CriticNet,
                              LatentState, PolicyNet, critic_forward,
                              embed_condition, load_checkpoint, policy_forward,
                              save_checkpoint, timestep_embedding)
from dpgdiff.numerics import RngStream, Tape, Tensor

from conftest import central_difference, relative_error


def make_policy(latent=2, hidden=(16, 16), stream_seed=1):
    return PolicyNet(latent, hidden, t_emb_dim=8, cond_dim=6,
                     stream=RngStream(stream_seed, "init/policy"))


def make_critic(latent=2, hidden=(8,), stream_seed=2):
    return CriticNet(latent, hidden, t_emb_dim=8, cond_dim=6,
                     stream=RngStream(stream_seed, "init/critic"))


class TestTimestepEmbedding:
    def test_shape_and_batch(self):
        assert timestep_embedding(3, 8).shape == (8,)
        assert timestep_embedding(np.arange(5), 8).shape == (5, 8)

    def test_distinct_steps_distinct_vectors(self):
        a, b = timestep_embedding(1, 16), timestep_embedding(2, 16)
        assert not np.allclose(a, b)

    def test_odd_dimension_padded(self):
        assert timestep_embedding(4, 7).shape == (7,)


class TestPolicyNet:
    def test_zero_final_layer_gives_zero_output(self, rng):
        net = make_policy()
        x = rng.normal(size=(4, 2))
        out = net.forward(x, np.arange(4), rng.normal(size=(4, 6)))
        assert np.all(out.data == 0.0)

    def test_output_shape_matches_latent_for_2d_and_64d(self, rng):
        for dim in (2, 64):
            net = PolicyNet(dim, (8,), t_emb_dim=4, cond_dim=4,
                            stream=RngStream(0, "p"))
            x = rng.normal(size=(3, dim))
            out = net.forward(x, np.zeros(3, dtype=int), np.zeros((3, 4)))
            assert out.shape == (3, dim)

    def test_fixed_weights_fixed_input_deterministic(self, rng):
        net = make_policy()
        for _, p in net.parameters():
            p.data = p.data + 0.05
        x = rng.normal(size=(2, 2))
        a = net.forward(x, np.array([1, 2]), np.zeros((2, 6)))
        b = net.forward(x, np.array([1, 2]), np.zeros((2, 6)))
        assert np.array_equal(a.data, b.data)

    def test_predict_matches_batched_forward(self, rng):
        net = make_policy()
        for _, p in net.parameters():
            p.data = rng.normal(size=p.data.shape) * 0.1
        x = rng.normal(size=2)
        cond = rng.normal(size=6)
        single = net.predict(x, 5, cond)
        batched = net.forward(x.reshape(1, -1), np.array([5]), cond.reshape(1, -1))
        assert np.array_equal(single, batched.data[0])

    def test_parameter_count_deterministic(self):
        net = make_policy()
        # (2+8+6)->16->16->2 with biases
        assert net.parameter_count() == (16 * 16 + 16) + (16 * 16 + 16) + (16 * 2 + 2)

    def test_bounded_inputs_no_overflow(self):
        net = make_policy()
        for _, p in net.parameters():
            p.data = p.data + 0.1
        big = np.full((1, 2), 1e6)
        out = net.forward(big, np.array([0]), np.zeros((1, 6)))
        assert np.all(np.isfinite(out.data))


class TestCriticNet:
    def test_zero_final_layer_gives_zero_value(self, rng):
        net = make_critic()
        x = rng.normal(size=(3, 2))
        q = net.forward(x, np.arange(3), np.zeros((3, 6)), rng.normal(size=(3, 2)))
        assert np.all(q.data == 0.0)
        assert q.shape == (3, 1)

    def test_action_shape_checked(self, rng):
        net = make_critic()
        with pytest.raises(ValueError, match="action shape"):
            net.forward(np.ones((2, 2)), np.zeros(2, dtype=int), np.zeros((2, 6)),
                        np.ones((2, 3)))

    def test_action_gradient_matches_finite_differences(self, rng):
        net = make_critic(hidden=(8, 8))
        for _, p in net.parameters():
            p.data = rng.normal(size=p.data.shape) * 0.4
        x = rng.normal(size=(1, 2))
        cond = rng.normal(size=(1, 6))

        for _ in range(100):
            action = rng.normal(size=(1, 2))

            a_leaf = Tensor(action.copy())
            with Tape() as tape:
                tape.watch(a_leaf)
                q = net.forward(x, np.array([3]), cond, a_leaf).sum()
            analytic = tape.backward(q)[a_leaf]

            def f(a):
                return net.value(x[0], 3, cond[0], a.reshape(-1))

            numeric = central_difference(f, action.copy())
            assert relative_error(analytic, numeric) <= 1e-4

    def test_default_critic_within_5_percent_of_default_policy(self):
        # contract mirrors the tiny-value-head / big-denoiser parameter split
        for latent in (2, 64):
            policy = PolicyNet(latent)
            critic = CriticNet(latent)
            assert critic.parameter_count() <= 0.05 * policy.parameter_count()

    def test_gradient_flows_to_both_action_and_params(self, rng):
        net = make_critic()
        for _, p in net.parameters():
            p.data = rng.normal(size=p.data.shape) * 0.3
        a_leaf = Tensor(rng.normal(size=(2, 2)))
        with Tape() as tape:
            tape.watch(a_leaf, *[p for _, p in net.parameters()])
            q = net.forward(rng.normal(size=(2, 2)), np.array([1, 2]),
                            np.zeros((2, 6)), a_leaf).sum()
        grads = tape.backward(q)
        assert np.any(grads[a_leaf] != 0.0)
        some_param = dict(net.parameters())["critic.layer0.W"]
        assert np.any(grads[some_param] != 0.0)


class TestConditionTable:
    def test_distinct_tokens_distinct_vectors_at_init(self):
        table = ConditionTable(4, 3, 8, 8, stream=RngStream(0, "init/table"))
        a = table.vector(0, 0)
        b = table.vector(1, 0)
        cos = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
        assert cos < 0.99

    def test_same_token_same_vector(self):
        table = ConditionTable(4, 3)
        assert np.array_equal(table.vector(2, 1), table.vector(2, 1))

    def test_embed_condition_flat_token(self):
        table = ConditionTable(4, 3, 2, 2)
        emb = embed_condition(table, 7)  # concept 2, context 1
        assert isinstance(emb, ConditionEmbedding)
        assert emb.token_id == 7
        assert np.array_equal(emb.vector, table.vector(2, 1))

    def test_out_of_range_token_rejected(self):
        table = ConditionTable(4, 3)
        with pytest.raises(IndexError):
            embed_condition(table, 12)
        with pytest.raises(IndexError):
            table.vector(4, 0)
        with pytest.raises(IndexError):
            table.vector(0, 3)

    def test_rows_gradient_reaches_used_rows_only(self):
        table = ConditionTable(3, 2, 2, 2, stream=RngStream(1, "t"))
        with Tape() as tape:
            tape.watch(table.concept, table.context)
            rows = table.rows(np.array([1, 1]), np.array([0, 1]))
            loss = rows.square().sum()
        grads = tape.backward(loss)
        gc = grads[table.concept]
        assert np.all(gc[0] == 0.0) and np.all(gc[2] == 0.0)
        assert np.any(gc[1] != 0.0)


class TestStateWrappers:
    def test_policy_and_critic_forward_on_states(self, rng):
        policy, critic = make_policy(), make_critic()
        table = ConditionTable(2, 2, 3, 3, stream=RngStream(4, "t"))
        state = LatentState(x=rng.normal(size=2), t=1, cond=embed_condition(table, 1))
        action = policy_forward(policy, state)
        assert action.shape == (2,)
        value = critic_forward(critic, state, action)
        assert value == 0.0  # zero-initialized critic head


class TestCheckpoint:
    def test_round_trip_reproduces_forward_bit_exactly(self, tmp_path, rng):
        policy, critic = make_policy(), make_critic()
        table = ConditionTable(3, 2, 3, 3, stream=RngStream(5, "t"))
        for _, p in policy.parameters() + critic.parameters():
            p.data = rng.normal(size=p.data.shape) * 0.2
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, policy, critic, table, step=42,
                        rng_counters={"data/noise": 17})
        restored = load_checkpoint(path)
        assert restored["step"] == 42
        assert restored["rng"] == {"data/noise": 17}

        x = rng.normal(size=(3, 2))
        t = np.array([1, 2, 3])
        cond = rng.normal(size=(3, 6))
        before = policy.forward(x, t, cond).data
        after = restored["policy"].forward(x, t, cond).data
        assert np.array_equal(before, after)

        qa = critic.forward(x, t, cond, x).data
        qb = restored["critic"].forward(x, t, cond, x).data
        assert np.array_equal(qa, qb)
        assert np.array_equal(restored["table"].vector(1, 1), table.vector(1, 1))

    def test_version_checked(self, tmp_path):
        policy, critic = make_policy(), make_critic()
        table = ConditionTable(2, 2)
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, policy, critic, table, step=0)
        import json

        record = json.loads(path.read_text())
        record["version"] = 99
        path.write_text(json.dumps(record))
        with pytest.raises(ValueError, match="version"):
            load_checkpoint(path)


class TestDpgChain:
    def test_chain_gradient_equals_two_pass_composition(self, rng):
        """Tape gradient of Q(x, policy(x)) vs (dQ/da)^T (dpolicy/dtheta) assembled."""
        policy = PolicyNet(2, (4,), t_emb_dim=2, cond_dim=2,
                           stream=RngStream(7, "p"))
        critic = CriticNet(2, (4,), t_emb_dim=2, cond_dim=2,
                           stream=RngStream(8, "c"))
        for _, p in policy.parameters() + critic.parameters():
            p.data = rng.normal(size=p.data.shape) * 0.5
        x = rng.normal(size=(1, 2))
        t = np.array([1])
        cond = rng.normal(size=(1, 2))

        # single-pass chain gradient
        with Tape() as tape:
            tape.watch(*[p for _, p in policy.parameters()])
            a = policy.forward(x, t, cond)
            q = critic.forward(x, t, cond, a).sum()
        chain = tape.backward(q)

        # pass 1: dQ/da at the policy action
        a_val = policy.forward(x, t, cond).data
        a_leaf = Tensor(a_val.copy())
        with Tape() as tape1:
            tape1.watch(a_leaf)
            q1 = critic.forward(x, t, cond, a_leaf).sum()
        dq_da = tape1.backward(q1)[a_leaf]

        # pass 2: (dQ/da)^T (da/dtheta) via a vector-Jacobian product
        with Tape() as tape2:
            tape2.watch(*[p for _, p in policy.parameters()])
            a2 = policy.forward(x, t, cond)
            proj = (a2 * Tensor(dq_da)).sum()
        composed = tape2.backward(proj)

        for _, p in policy.parameters():
            assert relative_error(chain[p], composed[p]) <= 1e-8
