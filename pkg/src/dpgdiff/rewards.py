"""Reward functions and critic regression targets.

Sign convention: every reward is a negative cost with maximum 0 at a perfect
prediction or perfect similarity, so maximizing value and minimizing the
underlying error are literally the same objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffusion import DiffusionSchedule, LatentCodec, predict_x0
from .numerics import RngStream, as_array

__all__ = [
    "RewardSpec",
    "FeatureEncoder",
    "recon_reward",
    "look_forward_reward",
    "feature_sim_reward",
    "mc_target",
    "discounted_target",
]

_KINDS = ("recon", "look_forward", "feature_sim", "composite")
_TARGET_MODES = ("monte_carlo", "discounted")


@dataclass
class RewardSpec:
    """A tagged choice of reward plus how critic targets are built from it.

    ``base`` lists the components of a composite reward: the first entry is
    the critic-carried kind, and "recon" adds the direct reconstruction term
    to the policy objective, weighted against the value term by ``lam``.
    """

    kind: str = "look_forward"
    base: tuple[str, ...] = ("feature_sim", "recon")
    lam: float = 1.0
    gamma: float = 0.0
    target_mode: str = "monte_carlo"
    lf_weight_clip: float = 10.0
    mc_horizon: int = 8
    feature_t_frac: float = 0.5

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"reward.kind must be one of {_KINDS}, got {self.kind!r}")
        if self.target_mode not in _TARGET_MODES:
            raise ValueError(
                f"reward.target_mode must be one of {_TARGET_MODES}, got {self.target_mode!r}"
            )
        if self.lam < 0:
            raise ValueError(f"reward.lambda must be >= 0, got {self.lam}")
        if not (0.0 <= self.gamma <= 1.0):
            raise ValueError(f"reward.gamma must be in [0, 1], got {self.gamma}")
        if self.lf_weight_clip <= 0:
            raise ValueError(f"reward.lf_weight_clip must be > 0, got {self.lf_weight_clip}")
        if self.mc_horizon < 1:
            raise ValueError(f"reward.mc_horizon must be >= 1, got {self.mc_horizon}")
        if not (0.0 < self.feature_t_frac <= 1.0):
            raise ValueError(
                f"reward.feature_t_frac must be in (0, 1], got {self.feature_t_frac}"
            )
        self.base = tuple(self.base)
        if self.kind == "composite":
            if not self.base:
                raise ValueError("composite reward requires a non-empty base kind list")
            for b in self.base:
                if b not in _KINDS[:3]:
                    raise ValueError(f"composite base kind {b!r} not recognized")

    @property
    def critic_kind(self) -> str:
        """The reward kind the critic regresses on."""
        if self.kind == "composite":
            return self.base[0]
        return self.kind


class FeatureEncoder:
    """Frozen random two-layer projection with unit-normalized outputs.

    Stands in for a pretrained self-supervised image encoder: any fixed,
    deterministic, discriminative embedding works because the critic, not the
    encoder, carries the gradient.
    """

    def __init__(self, input_dim: int, feature_dim: int = 32, hidden_dim: int = 64,
                 seed: int = 1234):
        stream = RngStream(seed, "feature_encoder")
        self.input_dim = input_dim
        self.feature_dim = feature_dim
        self.w1 = stream.gaussian((input_dim, hidden_dim)) / np.sqrt(input_dim)
        self.b1 = stream.gaussian((hidden_dim,)) * 0.1
        self.w2 = stream.gaussian((hidden_dim, feature_dim)) / np.sqrt(hidden_dim)

    def embed(self, x) -> np.ndarray:
        """Unit-L2-normalized embeddings; accepts (D,) or (N, D)."""
        x = as_array(x)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        h = np.tanh(x @ self.w1 + self.b1)
        e = h @ self.w2
        e = e / np.maximum(np.linalg.norm(e, axis=1, keepdims=True), 1e-12)
        return e[0] if single else e


def recon_reward(z, z_hat) -> float:
    """Negated mean squared noise error; 0 at a perfect prediction."""
    z, z_hat = as_array(z), as_array(z_hat)
    if z.shape != z_hat.shape:
        raise ValueError(f"recon_reward: shape mismatch {z.shape} vs {z_hat.shape}")
    return -float(np.mean((z - z_hat) ** 2))


def look_forward_reward(x0, x_t, z_hat, t: int, s: DiffusionSchedule,
                        clip: float = 10.0) -> float:
    """Clean-sample comparison reward, evaluated in noise space.

    Recovers the true noise from (x0, x_t), then returns
    -min(w_t, clip) * mse(z_hat, z) with w_t = (1 - ab_t) / ab_t. Below the
    clip this equals the negated squared error of the one-shot clean-sample
    estimate against x0.
    """
    if clip <= 0:
        raise ValueError(f"look_forward_reward: clip must be > 0, got {clip}")
    x0, x_t, z_hat = as_array(x0), as_array(x_t), as_array(z_hat)
    ab = float(s.alpha_bar[t])
    z = (x_t - np.sqrt(ab) * x0) / np.sqrt(1.0 - ab)
    w = min((1.0 - ab) / ab, clip)
    return -w * float(np.mean((z_hat - z) ** 2))


def feature_sim_reward(x0_hat, refs, enc: FeatureEncoder,
                       codec: LatentCodec | None = None) -> float:
    """Embedding-similarity reward against the reference set, in [-2, 0].

    Decodes the clean-sample estimate, embeds it and every reference, and
    returns -(1 - mean cosine similarity) over references.
    """
    samples = refs.samples if hasattr(refs, "samples") else list(refs)
    if len(samples) == 0:
        raise ValueError("feature_sim_reward: empty reference set")
    if codec is None:
        codec = LatentCodec.identity()
    gen = enc.embed(codec.decode(as_array(x0_hat)))
    ref_emb = enc.embed(np.stack([codec.decode(as_array(r)) for r in samples]))
    return -(1.0 - float(np.mean(ref_emb @ gen)))


def mc_target(rewards_by_step) -> float:
    """Accumulated reward target: the plain sum over trajectory steps."""
    rewards = list(rewards_by_step)
    if not rewards:
        raise ValueError("mc_target: empty reward list")
    return float(np.sum(rewards))


def discounted_target(immediate: float, next_q: float, gamma: float) -> float:
    """One-step bootstrapped target immediate + gamma * next_q.

    The bootstrap value must be evaluated detached (no gradient into the
    critic); callers pass it as a plain float.
    """
    if not (0.0 <= gamma <= 1.0):
        raise ValueError(f"discounted_target: gamma must be in [0, 1], got {gamma}")
    return float(immediate) + gamma * float(next_q)
