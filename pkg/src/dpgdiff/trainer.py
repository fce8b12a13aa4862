"""Alternating critic/policy training, the composite update, and the baseline arm.

Every outer step draws a fresh batch (reference sample, context token, timestep,
noise), regresses the critic toward accumulated-reward targets, then takes one
ascent step on the policy through the frozen critic. The baseline shares the
exact same data draws but updates the policy by plain noise reconstruction.
"""

from __future__ import annotations

import fnmatch
from dataclasses import dataclass, field

import numpy as np

from .concepts import ReferenceSet, apply_context
from .diffusion import DiffusionSchedule, LatentCodec, forward_diffuse, predict_x0
from .networks import ConditionTable, CriticNet, PolicyNet
from .numerics import RngStream, Tape, Tensor, no_recording
from .rewards import FeatureEncoder, RewardSpec, discounted_target, mc_target

__all__ = [
    "TrainConfig",
    "RunState",
    "SGD",
    "TrainingDiverged",
    "Trainer",
    "critic_update",
    "policy_update_dpg",
    "composite_update",
    "train_dpg",
    "train_baseline",
]


class TrainingDiverged(RuntimeError):
    """Raised after 50 consecutive steps with a non-finite loss."""


@dataclass
class TrainConfig:
    steps: int = 3000
    batch_size: int = 16
    lr_policy: float = 1e-3
    lr_critic: float = 1e-3
    momentum: float = 0.9
    reward: RewardSpec = field(default_factory=RewardSpec)
    param_mask: object = "all"  # "all" or a list of fnmatch patterns
    seed: int = 0
    eval_every: int = 500
    critic_steps_per_policy_step: int = 1
    action_noise: float = 0.3
    freeze_embeddings: bool = False

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError(f"trainer.steps must be >= 0, got {self.steps}")
        if self.batch_size < 1:
            raise ValueError(f"trainer.batch_size must be >= 1, got {self.batch_size}")
        if self.lr_policy <= 0 or self.lr_critic <= 0:
            raise ValueError("learning rates must be > 0")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError(f"trainer.momentum must be in [0, 1), got {self.momentum}")
        if self.eval_every < 1:
            raise ValueError(f"trainer.eval_every must be >= 1, got {self.eval_every}")
        if self.critic_steps_per_policy_step < 1:
            raise ValueError("trainer.critic_steps_per_policy_step must be >= 1")
        if self.action_noise < 0:
            raise ValueError(f"trainer.action_noise must be >= 0, got {self.action_noise}")


@dataclass
class RunState:
    policy: PolicyNet
    critic: CriticNet | None
    table: ConditionTable
    step: int
    metrics: list[dict]


class SGD:
    """Plain SGD with momentum over named parameter tensors."""

    def __init__(self, params: list[tuple[str, Tensor]], lr: float,
                 momentum: float = 0.9, maximize: bool = False):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.sign = 1.0 if maximize else -1.0
        self.velocity = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self, grads: dict[Tensor, np.ndarray]) -> None:
        for name, p in self.params:
            g = grads.get(p)
            if g is None:
                continue
            v = self.momentum * self.velocity[name] + g
            self.velocity[name] = v
            p.data = p.data + self.sign * self.lr * v


def _select_params(named: list[tuple[str, Tensor]], mask) -> list[tuple[str, Tensor]]:
    if mask == "all":
        return named
    patterns = list(mask)
    return [(n, p) for n, p in named if any(fnmatch.fnmatch(n, pat) for pat in patterns)]


@dataclass
class Batch:
    """One training batch in latent space; all rows drawn independently."""

    x0: np.ndarray        # (B, D) clean, context-applied, encoded
    x: np.ndarray         # (B, D) noised to per-row timestep
    t: np.ndarray         # (B,) int
    z: np.ndarray         # (B, D) the noise that produced x
    concept: np.ndarray   # (B,) int tokens
    context: np.ndarray   # (B,) int tokens
    cond: np.ndarray      # (B, C) condition vectors (constant view)


# ---------------------------------------------------------------------------
# single-step updates
# ---------------------------------------------------------------------------

def critic_update(critic: CriticNet, batch: Batch, actions: np.ndarray,
                  targets: np.ndarray, opt: SGD) -> float:
    """One regression step of the critic toward given targets.

    Actions and condition vectors enter as constants; only critic parameters
    move. Returns the batch mean-squared loss before the step.
    """
    with Tape() as tape:
        tape.watch(*[p for _, p in opt.params])
        q = critic.forward(batch.x, batch.t, batch.cond, actions)
        loss = (q - targets.reshape(-1, 1)).square().mean()
        grads = tape.backward(loss)
    opt.step(grads)
    return loss.item()


def policy_update_dpg(policy: PolicyNet, critic: CriticNet, table: ConditionTable,
                      batch: Batch, opt: SGD, train_table: bool,
                      row_mask: np.ndarray | None = None) -> float:
    """One ascent step on mean value of the policy's actions under a frozen critic.

    Gradient reaches the policy (and optionally the condition table) only
    through the action input of the critic; critic parameters stay fixed.
    ``row_mask`` zeroes the value contribution of excluded rows.
    """
    with Tape() as tape:
        tape.watch(*[p for _, p in opt.params])
        cond = table.rows(batch.concept, batch.context) if train_table \
            else Tensor(batch.cond)
        a = policy.forward(batch.x, batch.t, cond)
        q = critic.forward(batch.x, batch.t, batch.cond, a)
        if row_mask is not None:
            q = q * Tensor(row_mask.reshape(-1, 1).astype(np.float64))
        obj = q.mean()
        grads = tape.backward(obj)
    opt.step(grads)
    valid = q.data if row_mask is None else q.data[row_mask]
    return float(valid.mean()) if valid.size else 0.0


def composite_update(policy: PolicyNet, critic: CriticNet, table: ConditionTable,
                     batch: Batch, opt: SGD, lam: float, train_table: bool,
                     row_mask: np.ndarray | None = None) -> tuple[float, float]:
    """One ascent step on lam * mean(Q) - reconstruction MSE.

    With lam = 0 the parameter update is exactly the baseline reconstruction
    step: the value branch contributes exact zeros and the reconstruction
    gradient is computed through the identical graph.
    """
    with Tape() as tape:
        tape.watch(*[p for _, p in opt.params])
        cond = table.rows(batch.concept, batch.context) if train_table \
            else Tensor(batch.cond)
        a = policy.forward(batch.x, batch.t, cond)
        q = critic.forward(batch.x, batch.t, batch.cond, a)
        if row_mask is not None:
            q = q * Tensor(row_mask.reshape(-1, 1).astype(np.float64))
        mse = (Tensor(batch.z) - a).square().mean()
        obj = q.mean() * lam + (-mse)
        grads = tape.backward(obj)
    opt.step(grads)
    valid = q.data if row_mask is None else q.data[row_mask]
    mean_q = float(valid.mean()) if valid.size else 0.0
    return mean_q, mse.item()


def _baseline_update(policy: PolicyNet, table: ConditionTable, batch: Batch,
                     opt: SGD, train_table: bool) -> float:
    """One descent step on the plain noise-reconstruction loss."""
    with Tape() as tape:
        tape.watch(*[p for _, p in opt.params])
        cond = table.rows(batch.concept, batch.context) if train_table \
            else Tensor(batch.cond)
        a = policy.forward(batch.x, batch.t, cond)
        loss = (Tensor(batch.z) - a).square().mean()
        grads = tape.backward(loss)
    opt.step(grads)
    return loss.item()


# ---------------------------------------------------------------------------
# the training loop
# ---------------------------------------------------------------------------

class Trainer:
    """Owns the networks, streams and optimizers of one training run."""

    def __init__(
        self,
        policy: PolicyNet,
        critic: CriticNet | None,
        table: ConditionTable,
        schedule: DiffusionSchedule,
        refs: ReferenceSet,
        cfg: TrainConfig,
        enc: FeatureEncoder | None = None,
        codec: LatentCodec | None = None,
        n_train_contexts: int | None = None,
    ):
        self.policy = policy
        self.critic = critic
        self.table = table
        self.schedule = schedule
        self.refs = refs
        self.cfg = cfg
        self.enc = enc
        self.codec = codec if codec is not None else LatentCodec.identity()
        self.n_train_contexts = n_train_contexts or table.n_contexts

        seed = cfg.seed
        self.s_ref = RngStream(seed, "data/ref")
        self.s_ctx = RngStream(seed, "data/context")
        self.s_t = RngStream(seed, "data/t")
        self.s_noise = RngStream(seed, "data/noise")
        self.s_mc = RngStream(seed, "critic/mc")
        self.s_td = RngStream(seed, "critic/td")
        self.s_explore = RngStream(seed, "critic/explore")

        # encoded, context-applied reference bank: ref_latent[i, ctx]
        self._ref_latents = {
            (i, c): self.codec.encode(apply_context(s, c, refs.domain))
            for i, s in enumerate(refs.samples)
            for c in range(self.n_train_contexts)
        }
        if enc is not None:
            self._ref_embs = enc.embed(refs.stacked())

        spec = cfg.reward
        trained = _select_params(policy.parameters(), cfg.param_mask)
        if not cfg.freeze_embeddings:
            trained = trained + table.parameters()
        self._trained_policy_params = trained
        self.opt_policy_ascent = SGD(trained, cfg.lr_policy, cfg.momentum, maximize=True)
        self.opt_policy_descent = SGD(trained, cfg.lr_policy, cfg.momentum, maximize=False)
        if critic is not None:
            self.opt_critic = SGD(critic.parameters(), cfg.lr_critic, cfg.momentum)
        self.metrics: list[dict] = []
        self._nonfinite_streak = 0
        self._skipped_total = 0

    # -- batch construction ------------------------------------------------

    def _draw_batch(self) -> Batch:
        B = self.cfg.batch_size
        D = self.policy.latent_dim
        ref_idx = self.s_ref.integers(0, len(self.refs.samples), B)
        ctx = self.s_ctx.integers(0, self.n_train_contexts, B)
        t = self.s_t.integers(0, self.schedule.T, B)
        z = self.s_noise.gaussian((B, D))
        x0 = np.stack([self._ref_latents[(int(i), int(c))] for i, c in zip(ref_idx, ctx)])
        x = forward_diffuse(x0, t, z, self.schedule)
        concept = np.full(B, self.refs.concept_token, dtype=np.int64)
        cond = np.concatenate(
            [self.table.concept.data[concept], self.table.context.data[ctx]], axis=1
        )
        return Batch(x0=x0, x=x, t=t, z=z, concept=concept, context=ctx, cond=cond)

    def _predict_batch(self, x: np.ndarray, t: np.ndarray, ctx: np.ndarray) -> np.ndarray:
        """Policy forward on plain arrays, never recorded."""
        concept = np.full(len(x), self.refs.concept_token, dtype=np.int64)
        cond = np.concatenate(
            [self.table.concept.data[concept], self.table.context.data[ctx]], axis=1
        )
        with no_recording():
            out = self.policy.forward(x, t, cond)
        return out.data

    # -- rewards and targets -----------------------------------------------

    def _rewards_vec(self, kind: str, x_t, z, z_hat, t) -> np.ndarray:
        """Per-row immediate rewards; z is the drawn noise for each row."""
        s = self.schedule
        if kind == "recon":
            return -np.mean((z - z_hat) ** 2, axis=1)
        if kind == "look_forward":
            ab = s.alpha_bar[t]
            w = np.minimum((1.0 - ab) / ab, self.cfg.reward.lf_weight_clip)
            return -w * np.mean((z_hat - z) ** 2, axis=1)
        if kind == "feature_sim":
            x0_hat = predict_x0(x_t, z_hat, t, s)
            gen = self.enc.embed(self.codec.decode(x0_hat))
            sims = gen @ self._ref_embs.T
            return -(1.0 - sims.mean(axis=1))
        raise ValueError(f"unknown reward kind {kind!r}")

    def _feature_row_mask(self, t: np.ndarray) -> np.ndarray | None:
        """Rows eligible for the feature reward: t within the configured fraction of T."""
        spec = self.cfg.reward
        if spec.critic_kind != "feature_sim" or spec.feature_t_frac >= 1.0:
            return None
        return t <= spec.feature_t_frac * self.schedule.T

    def _targets(self, batch: Batch, actions: np.ndarray,
                 valid: np.ndarray) -> np.ndarray:
        """Critic regression targets per row; invalid rows are left as NaN."""
        spec = self.cfg.reward
        kind = spec.critic_kind
        B = len(batch.t)
        r_now = np.full(B, np.nan)
        idx = np.flatnonzero(valid)
        if idx.size:
            r_now[idx] = self._rewards_vec(
                kind, batch.x[idx], batch.z[idx], actions[idx], batch.t[idx]
            )
        targets = np.full(B, np.nan)

        if spec.target_mode == "monte_carlo":
            # Teacher-forced window: re-noise the same clean sample at each
            # earlier step, query the current policy, and sum the rewards.
            rows_x0, rows_t, rows_owner = [], [], []
            for b in idx:
                t_b = int(batch.t[b])
                lo = max(0, t_b - spec.mc_horizon + 1)
                for i in range(lo, t_b):
                    rows_x0.append(batch.x0[b])
                    rows_t.append(i)
                    rows_owner.append(b)
            window: dict[int, list[float]] = {int(b): [] for b in idx}
            if rows_x0:
                rx0 = np.stack(rows_x0)
                rt = np.asarray(rows_t, dtype=np.int64)
                rz = self.s_mc.gaussian(rx0.shape)
                rx = forward_diffuse(rx0, rt, rz, self.schedule)
                rctx = batch.context[np.asarray(rows_owner)]
                rzhat = self._predict_batch(rx, rt, rctx)
                r_hist = self._rewards_vec(kind, rx, rz, rzhat, rt)
                for owner, r in zip(rows_owner, r_hist):
                    window[int(owner)].append(float(r))
            targets[idx] = [mc_target(window[int(b)] + [r_now[b]]) for b in idx]
        else:  # discounted one-step bootstrap, detached critic
            prev_t = np.maximum(batch.t - 1, 0)
            zp = self.s_td.gaussian(batch.x0.shape)
            xp = forward_diffuse(batch.x0, prev_t, zp, self.schedule)
            ap = self._predict_batch(xp, prev_t, batch.context)
            with no_recording():
                concept = np.full(B, self.refs.concept_token, dtype=np.int64)
                cond = np.concatenate(
                    [self.table.concept.data[concept],
                     self.table.context.data[batch.context]], axis=1)
                qp = self.critic.forward(xp, prev_t, cond, ap).data[:, 0]
            for b in idx:
                nq = float(qp[b]) if batch.t[b] > 0 else 0.0
                targets[b] = discounted_target(r_now[b], nq, spec.gamma)
        return targets

    # -- steps ---------------------------------------------------------------

    def _track_finite(self, value: float) -> None:
        if np.isfinite(value):
            self._nonfinite_streak = 0
        else:
            self._nonfinite_streak += 1
            if self._nonfinite_streak >= 50:
                raise TrainingDiverged(
                    f"non-finite loss for {self._nonfinite_streak} consecutive steps"
                )

    def step_dpg(self) -> dict:
        batch = self._draw_batch()
        fmask = self._feature_row_mask(batch.t)
        eligible = np.ones(len(batch.t), dtype=bool) if fmask is None else fmask
        actions = self._predict_batch(batch.x, batch.t, batch.context)
        # The critic regresses at noise-perturbed actions; without that
        # perturbation its action gradient is unidentified from on-policy data.
        explored = actions
        if self.cfg.action_noise > 0:
            explored = actions + self.cfg.action_noise * self.s_explore.gaussian(actions.shape)
        targets = self._targets(batch, explored, eligible)

        finite = np.isfinite(targets)
        usable = eligible & finite
        skipped = int(np.sum(eligible & ~finite))
        self._skipped_total += skipped

        critic_loss = np.nan
        if np.any(usable):
            sub = Batch(
                x0=batch.x0[usable], x=batch.x[usable], t=batch.t[usable],
                z=batch.z[usable], concept=batch.concept[usable],
                context=batch.context[usable], cond=batch.cond[usable],
            )
            for _ in range(self.cfg.critic_steps_per_policy_step):
                critic_loss = critic_update(
                    self.critic, sub, explored[usable], targets[usable], self.opt_critic
                )
        self._track_finite(critic_loss if np.any(usable) else 0.0)

        spec = self.cfg.reward
        if spec.kind == "composite":
            mean_q, recon_loss = composite_update(
                self.policy, self.critic, self.table, batch,
                self.opt_policy_ascent, spec.lam, not self.cfg.freeze_embeddings,
                row_mask=fmask,
            )
        else:
            mean_q = policy_update_dpg(
                self.policy, self.critic, self.table, batch,
                self.opt_policy_ascent, not self.cfg.freeze_embeddings,
                row_mask=fmask,
            )
            recon_loss = float(np.mean((batch.z - actions) ** 2))
        return {
            "critic_loss": float(critic_loss),
            "mean_q": float(mean_q),
            "recon_loss": float(recon_loss),
            "skipped": skipped,
            "_trace": (batch.t, targets),
        }

    def step_baseline(self) -> dict:
        batch = self._draw_batch()
        loss = _baseline_update(
            self.policy, self.table, batch, self.opt_policy_descent,
            not self.cfg.freeze_embeddings,
        )
        self._track_finite(loss)
        return {"recon_loss": float(loss), "_trace": (batch.t, None)}

    def run(self, algorithm: str = "dpg") -> RunState:
        if algorithm not in ("dpg", "baseline"):
            raise ValueError(f"unknown algorithm {algorithm!r}")
        if algorithm == "dpg" and self.critic is None:
            raise ValueError("dpg training requires a critic")
        step_fn = self.step_dpg if algorithm == "dpg" else self.step_baseline
        kind = self.cfg.reward.critic_kind
        for n in range(self.cfg.steps):
            row = step_fn()
            if (n + 1) % self.cfg.eval_every == 0 or n + 1 == self.cfg.steps:
                ts, targets = row.pop("_trace")
                record = {"step": n + 1}
                record.update(
                    {k: (v if not (isinstance(v, float) and not np.isfinite(v)) else None)
                     for k, v in row.items()}
                )
                self.metrics.append(record)
                if targets is not None:
                    for t_i, v in list(zip(ts, targets))[:4]:
                        if np.isfinite(v):
                            self.metrics.append(
                                {"step": n + 1, "t": int(t_i), "kind": kind,
                                 "value": float(v)}
                            )
        return RunState(
            policy=self.policy, critic=self.critic, table=self.table,
            step=self.cfg.steps, metrics=self.metrics,
        )


def train_dpg(policy, critic, table, schedule, refs, cfg,
              enc=None, codec=None, n_train_contexts=None) -> RunState:
    """Run the full alternating loop for cfg.steps and return the final state."""
    tr = Trainer(policy, critic, table, schedule, refs, cfg,
                 enc=enc, codec=codec, n_train_contexts=n_train_contexts)
    return tr.run("dpg")


def train_baseline(policy, table, schedule, refs, cfg,
                   codec=None, n_train_contexts=None) -> RunState:
    """Reconstruction-only control arm; identical data draws, no critic."""
    tr = Trainer(policy, None, table, schedule, refs, cfg,
                 codec=codec, n_train_contexts=n_train_contexts)
    return tr.run("baseline")
