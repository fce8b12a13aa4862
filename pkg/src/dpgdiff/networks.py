"""The denoiser policy, the scalar critic, and learned condition embeddings.

Both networks are tanh MLPs over concatenated inputs. Final layers start at
zero so a freshly built policy predicts zero noise and a fresh critic outputs
zero value, which makes initial behavior exactly testable.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass

import numpy as np

from .numerics import RngStream, Tensor, concat, matmul, no_recording, take_rows, tanh

__all__ = [
    "timestep_embedding",
    "ConditionEmbedding",
    "ConditionTable",
    "LatentState",
    "embed_condition",
    "PolicyNet",
    "CriticNet",
    "policy_forward",
    "critic_forward",
    "save_checkpoint",
    "load_checkpoint",
]


def timestep_embedding(t, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """Sinusoidal encoding of integer timesteps; (dim,) for a scalar, (B, dim) batched."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / half)
    angles = t_arr[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(angles), np.cos(angles)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((len(t_arr), 1))], axis=1)
    return emb[0] if np.ndim(t) == 0 else emb


def _xavier(stream: RngStream, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return stream.uniform((fan_in, fan_out), -limit, limit)


class _MLP:
    """Plain tanh MLP; weights are named Tensors, zero-initialized last layer."""

    def __init__(self, in_dim: int, hidden: tuple[int, ...], out_dim: int, stream: RngStream):
        self.in_dim = in_dim
        self.hidden = tuple(int(h) for h in hidden)
        self.out_dim = out_dim
        self.params: dict[str, Tensor] = {}
        dims = [in_dim, *self.hidden, out_dim]
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            last = i == len(dims) - 2
            w = np.zeros((a, b)) if last else _xavier(stream, a, b)
            self.params[f"layer{i}.W"] = Tensor(w)
            self.params[f"layer{i}.b"] = Tensor(np.zeros(b))

    @property
    def n_layers(self) -> int:
        return len(self.hidden) + 1

    def forward(self, x: Tensor) -> Tensor:
        h = x
        for i in range(self.n_layers):
            h = matmul(h, self.params[f"layer{i}.W"]) + self.params[f"layer{i}.b"]
            if i < self.n_layers - 1:
                h = tanh(h)
        return h

    def parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.params.items())

    def parameter_count(self) -> int:
        return sum(p.size for _, p in self.parameters())


@dataclass(frozen=True)
class ConditionEmbedding:
    """A resolved condition: the embedding vector plus its flat token id."""

    vector: np.ndarray
    token_id: int


class ConditionTable:
    """Trainable embedding rows for concept and context tokens.

    The condition vector fed to the networks is the concatenation of one
    concept row and one context row, so unseen (concept, context) pairs still
    compose out of trained parts. Flat token ids enumerate the pair grid.
    """

    def __init__(
        self,
        n_concepts: int,
        n_contexts: int,
        concept_dim: int = 8,
        context_dim: int = 8,
        stream: RngStream | None = None,
    ):
        if stream is None:
            stream = RngStream(0, "init/table")
        self.n_concepts = n_concepts
        self.n_contexts = n_contexts
        scale = 1.0 / np.sqrt(concept_dim)
        self.concept = Tensor(stream.gaussian((n_concepts, concept_dim)) * scale)
        self.context = Tensor(stream.gaussian((n_contexts, context_dim)) * scale)

    @property
    def dim(self) -> int:
        return self.concept.shape[1] + self.context.shape[1]

    def rows(self, concept_ids, context_ids) -> Tensor:
        """Batched condition matrix (B, dim); recorded so rows can train."""
        return concat(
            [take_rows(self.concept, concept_ids), take_rows(self.context, context_ids)],
            axis=1,
        )

    def vector(self, concept_id: int, context_id: int) -> np.ndarray:
        self._check(concept_id, context_id)
        return np.concatenate(
            [self.concept.data[concept_id], self.context.data[context_id]]
        )

    def _check(self, concept_id: int, context_id: int) -> None:
        if not (0 <= concept_id < self.n_concepts):
            raise IndexError(f"concept token {concept_id} out of range [0, {self.n_concepts})")
        if not (0 <= context_id < self.n_contexts):
            raise IndexError(f"context token {context_id} out of range [0, {self.n_contexts})")

    def parameters(self) -> list[tuple[str, Tensor]]:
        return [("table.concept", self.concept), ("table.context", self.context)]


def embed_condition(table: ConditionTable, token_id: int) -> ConditionEmbedding:
    """Resolve a flat token id (concept * n_contexts + context) to its embedding."""
    n_tokens = table.n_concepts * table.n_contexts
    if not (0 <= token_id < n_tokens):
        raise IndexError(f"token {token_id} out of range [0, {n_tokens})")
    concept_id, context_id = divmod(token_id, table.n_contexts)
    return ConditionEmbedding(vector=table.vector(concept_id, context_id), token_id=token_id)


@dataclass
class LatentState:
    """One denoising-chain state: the noised latent, its step, and the condition."""

    x: np.ndarray
    t: int
    cond: ConditionEmbedding


class PolicyNet:
    """Denoiser MLP over [latent, timestep embedding, condition vector].

    Output shape equals the latent shape; the action it emits is the predicted
    noise for the given noised latent.
    """

    def __init__(
        self,
        latent_dim: int,
        hidden: tuple[int, ...] = (128, 128, 128),
        t_emb_dim: int = 16,
        cond_dim: int = 16,
        stream: RngStream | None = None,
    ):
        if stream is None:
            stream = RngStream(0, "init/policy")
        self.latent_dim = latent_dim
        self.t_emb_dim = t_emb_dim
        self.cond_dim = cond_dim
        self.mlp = _MLP(latent_dim + t_emb_dim + cond_dim, hidden, latent_dim, stream)

    def describe(self) -> dict:
        return {
            "kind": "policy",
            "latent_dim": self.latent_dim,
            "hidden": list(self.mlp.hidden),
            "t_emb_dim": self.t_emb_dim,
            "cond_dim": self.cond_dim,
        }

    def forward(self, x, t, cond) -> Tensor:
        """Batched recorded forward: x (B, D), t (B,), cond (B, C) -> (B, D)."""
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
        cond = cond if isinstance(cond, Tensor) else Tensor(np.asarray(cond, dtype=np.float64))
        t_emb = Tensor(timestep_embedding(np.asarray(t), self.t_emb_dim))
        return self.mlp.forward(concat([x, t_emb, cond], axis=1))

    def predict(self, x: np.ndarray, t: int, cond: np.ndarray) -> np.ndarray:
        """Single-sample forward outside any tape; returns a plain array."""
        with no_recording():
            out = self.forward(x.reshape(1, -1), np.array([t]), cond.reshape(1, -1))
        return out.data[0]

    def parameters(self) -> list[tuple[str, Tensor]]:
        return [(f"policy.{n}", p) for n, p in self.mlp.parameters()]

    def parameter_count(self) -> int:
        return self.mlp.parameter_count()


class CriticNet:
    """Scalar value head over [latent, action, timestep embedding, condition].

    Kept far smaller than the policy; smooth activations everywhere so the
    value is differentiable with respect to the action.
    """

    def __init__(
        self,
        latent_dim: int,
        hidden: tuple[int, ...] = (12, 12),
        t_emb_dim: int = 16,
        cond_dim: int = 16,
        stream: RngStream | None = None,
    ):
        if stream is None:
            stream = RngStream(0, "init/critic")
        self.latent_dim = latent_dim
        self.t_emb_dim = t_emb_dim
        self.cond_dim = cond_dim
        self.mlp = _MLP(2 * latent_dim + t_emb_dim + cond_dim, hidden, 1, stream)

    def describe(self) -> dict:
        return {
            "kind": "critic",
            "latent_dim": self.latent_dim,
            "hidden": list(self.mlp.hidden),
            "t_emb_dim": self.t_emb_dim,
            "cond_dim": self.cond_dim,
        }

    def forward(self, x, t, cond, action) -> Tensor:
        """Batched recorded forward -> value column (B, 1)."""
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
        action = action if isinstance(action, Tensor) else Tensor(np.asarray(action, dtype=np.float64))
        cond = cond if isinstance(cond, Tensor) else Tensor(np.asarray(cond, dtype=np.float64))
        if action.shape != x.shape:
            raise ValueError(f"critic: action shape {action.shape} != latent shape {x.shape}")
        t_emb = Tensor(timestep_embedding(np.asarray(t), self.t_emb_dim))
        return self.mlp.forward(concat([x, action, t_emb, cond], axis=1))

    def value(self, x: np.ndarray, t: int, cond: np.ndarray, action: np.ndarray) -> float:
        with no_recording():
            out = self.forward(
                x.reshape(1, -1), np.array([t]), cond.reshape(1, -1), action.reshape(1, -1)
            )
        return float(out.data[0, 0])

    def parameters(self) -> list[tuple[str, Tensor]]:
        return [(f"critic.{n}", p) for n, p in self.mlp.parameters()]

    def parameter_count(self) -> int:
        return self.mlp.parameter_count()


def policy_forward(net: PolicyNet, state) -> np.ndarray:
    """Single-state convenience wrapper matching the (net, state) calling shape."""
    return net.predict(np.asarray(state.x, dtype=np.float64), state.t, state.cond.vector)


def critic_forward(net: CriticNet, state, action: np.ndarray) -> float:
    return net.value(
        np.asarray(state.x, dtype=np.float64), state.t, state.cond.vector,
        np.asarray(action, dtype=np.float64),
    )


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_CHECKPOINT_VERSION = 1


def _encode_array(a: np.ndarray) -> dict:
    return {
        "shape": list(a.shape),
        "data": base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii"),
    }


def _decode_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(d["shape"])


def save_checkpoint(
    path,
    policy: PolicyNet,
    critic: CriticNet | None,
    table: ConditionTable,
    step: int,
    rng_counters: dict[str, int] | None = None,
) -> None:
    """Write a versioned, textual, bit-exact snapshot of all parameters."""
    record = {
        "version": _CHECKPOINT_VERSION,
        "step": step,
        "policy": {"arch": policy.describe(),
                   "params": {n: _encode_array(p.data) for n, p in policy.parameters()}},
        "table": {
            "n_concepts": table.n_concepts,
            "n_contexts": table.n_contexts,
            "params": {n: _encode_array(p.data) for n, p in table.parameters()},
        },
        "rng": rng_counters or {},
    }
    if critic is not None:
        record["critic"] = {"arch": critic.describe(),
                            "params": {n: _encode_array(p.data) for n, p in critic.parameters()}}
    with open(path, "w") as f:
        json.dump(record, f)


def load_checkpoint(path) -> dict:
    """Restore networks from a checkpoint; forward passes reproduce bit-exactly."""
    with open(path) as f:
        record = json.load(f)
    if record.get("version") != _CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {record.get('version')!r}")

    pa = record["policy"]["arch"]
    policy = PolicyNet(pa["latent_dim"], tuple(pa["hidden"]), pa["t_emb_dim"], pa["cond_dim"])
    for name, p in policy.parameters():
        p.data = _decode_array(record["policy"]["params"][name])

    critic = None
    if "critic" in record:
        ca = record["critic"]["arch"]
        critic = CriticNet(ca["latent_dim"], tuple(ca["hidden"]), ca["t_emb_dim"], ca["cond_dim"])
        for name, p in critic.parameters():
            p.data = _decode_array(record["critic"]["params"][name])

    tb = record["table"]
    cdim = _decode_array(tb["params"]["table.concept"]).shape[1]
    xdim = _decode_array(tb["params"]["table.context"]).shape[1]
    table = ConditionTable(tb["n_concepts"], tb["n_contexts"], cdim, xdim)
    for name, p in table.parameters():
        p.data = _decode_array(tb["params"][name])

    return {
        "policy": policy,
        "critic": critic,
        "table": table,
        "step": record["step"],
        "rng": record.get("rng", {}),
    }
