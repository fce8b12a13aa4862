"""Config schema, YAML loading, dotted-key overrides, and canonical snapshots.

A config is a nested dict validated against the defaults below. Every error
names the first failing field so CLI users see exactly what to fix.
"""

from __future__ import annotations

import copy

import yaml

from .rewards import RewardSpec
from .trainer import TrainConfig

__all__ = ["ConfigError", "DEFAULTS", "load_config", "apply_overrides",
           "validate_config", "snapshot_yaml", "reward_spec_from", "train_config_from"]


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


DEFAULTS: dict = {
    "seed": 0,
    "domain": "mixture2d",
    "concept_id": 0,
    "glyph_size": 8,
    "n_concepts": 10,
    "n_contexts": 5,
    "schedule": {"T": 100, "beta_start": 1e-4, "beta_end": 0.02, "kind": "linear"},
    "codec": {"mode": "identity"},
    "policy": {"hidden": [128, 128, 128], "t_emb_dim": 16},
    "critic": {"hidden": [12, 12]},
    "embedding": {"concept_dim": 8, "context_dim": 8},
    "encoder": {"feature_dim": 32, "hidden_dim": 64, "seed": 1234},
    "reward": {
        "kind": "look_forward",
        "base": ["feature_sim", "recon"],
        "lambda": 1.0,
        "gamma": 0.0,
        "target_mode": "monte_carlo",
        "lf_weight_clip": 10.0,
        "mc_horizon": 8,
        "feature_t_frac": 0.5,
    },
    "trainer": {
        "algorithm": "dpg",
        "steps": 2000,
        "batch_size": 16,
        "lr_policy": 1e-3,
        "lr_critic": 1e-3,
        "momentum": 0.9,
        "param_mask": "all",
        "eval_every": 200,
        "critic_steps_per_policy_step": 1,
        "action_noise": 0.3,
        "freeze_embeddings": False,
    },
    "eval": {
        "n_per_case": 8,
        "mode": "deterministic",
        "seed": 777,
        "contexts": "all",
        "probe_iters": 400,
    },
}


def _type_ok(default, value) -> bool:
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int) and not isinstance(default, bool):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, str):
        return isinstance(value, str)
    if isinstance(default, list):
        return isinstance(value, list)
    return True


def _merge(base: dict, incoming: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in incoming.items():
        dotted = f"{path}{key}"
        if key not in base:
            raise ConfigError(dotted, "unknown config key")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(dotted, f"expected a mapping, got {type(value).__name__}")
            out[key] = _merge(base[key], value, dotted + ".")
        else:
            # param_mask and eval.contexts legitimately switch str <-> list
            if dotted not in ("trainer.param_mask", "eval.contexts") \
                    and not _type_ok(base[key], value):
                raise ConfigError(
                    dotted,
                    f"type conflict: expected {type(base[key]).__name__}, "
                    f"got {type(value).__name__}",
                )
            out[key] = value
    return out


def load_config(path=None) -> dict:
    """Defaults overlaid with a YAML file (comments allowed)."""
    if path is None:
        return copy.deepcopy(DEFAULTS)
    with open(path) as f:
        incoming = yaml.safe_load(f) or {}
    if not isinstance(incoming, dict):
        raise ConfigError("<root>", "config file must contain a mapping")
    return _merge(DEFAULTS, incoming)


def apply_overrides(cfg: dict, sets: list[str]) -> dict:
    """Apply repeatable ``key.path=value`` overrides, values parsed as YAML."""
    cfg = copy.deepcopy(cfg)
    for item in sets:
        if "=" not in item:
            raise ConfigError(item, "override must look like key.path=value")
        dotted, raw = item.split("=", 1)
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError:
            raise ConfigError(dotted, f"cannot parse override value {raw!r}") from None
        node = cfg
        default_node = DEFAULTS
        keys = dotted.split(".")
        for k in keys[:-1]:
            if not isinstance(node.get(k), dict):
                raise ConfigError(dotted, "unknown config key")
            node = node[k]
            default_node = default_node[k]
        leaf = keys[-1]
        if leaf not in node or isinstance(node[leaf], dict):
            raise ConfigError(dotted, "unknown config key")
        if dotted not in ("trainer.param_mask", "eval.contexts") \
                and not _type_ok(default_node[leaf], value):
            raise ConfigError(
                dotted,
                f"type conflict: expected {type(default_node[leaf]).__name__}, "
                f"got {type(value).__name__}",
            )
        node[leaf] = value
    return cfg


def reward_spec_from(cfg: dict) -> RewardSpec:
    r = cfg["reward"]
    try:
        return RewardSpec(
            kind=r["kind"],
            base=tuple(r["base"]),
            lam=float(r["lambda"]),
            gamma=float(r["gamma"]),
            target_mode=r["target_mode"],
            lf_weight_clip=float(r["lf_weight_clip"]),
            mc_horizon=int(r["mc_horizon"]),
            feature_t_frac=float(r["feature_t_frac"]),
        )
    except ValueError as e:
        raise ConfigError("reward", str(e)) from None


def train_config_from(cfg: dict) -> TrainConfig:
    t = cfg["trainer"]
    try:
        return TrainConfig(
            steps=int(t["steps"]),
            batch_size=int(t["batch_size"]),
            lr_policy=float(t["lr_policy"]),
            lr_critic=float(t["lr_critic"]),
            momentum=float(t["momentum"]),
            reward=reward_spec_from(cfg),
            param_mask=t["param_mask"],
            seed=int(cfg["seed"]),
            eval_every=int(t["eval_every"]),
            critic_steps_per_policy_step=int(t["critic_steps_per_policy_step"]),
            action_noise=float(t["action_noise"]),
            freeze_embeddings=bool(t["freeze_embeddings"]),
        )
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError("trainer", str(e)) from None


def validate_config(cfg: dict) -> dict:
    """Range and enumeration checks; returns the config unchanged if valid."""
    def check(cond, field, msg):
        if not cond:
            raise ConfigError(field, msg)

    check(cfg["domain"] in ("mixture2d", "glyph"), "domain",
          f"must be mixture2d or glyph, got {cfg['domain']!r}")
    check(cfg["glyph_size"] in (8, 16), "glyph_size", "must be 8 or 16")
    check(cfg["concept_id"] >= 0, "concept_id", "must be >= 0")
    check(cfg["n_concepts"] > cfg["concept_id"], "n_concepts",
          "must exceed concept_id")
    check(cfg["n_contexts"] >= 2, "n_contexts", "must be >= 2")
    s = cfg["schedule"]
    check(s["T"] >= 2, "schedule.T", "must be >= 2")
    check(0.0 < s["beta_start"] <= s["beta_end"] < 1.0, "schedule.beta_start",
          "need 0 < beta_start <= beta_end < 1")
    check(s["kind"] in ("linear", "cosine"), "schedule.kind",
          "must be linear or cosine")
    check(cfg["codec"]["mode"] in ("identity", "linear"), "codec.mode",
          "must be identity or linear")
    check(cfg["trainer"]["algorithm"] in ("dpg", "baseline"), "trainer.algorithm",
          "must be dpg or baseline")
    check(cfg["eval"]["mode"] in ("deterministic", "ancestral"), "eval.mode",
          "must be deterministic or ancestral")
    ctx = cfg["eval"]["contexts"]
    if ctx != "all":
        check(isinstance(ctx, list) and all(isinstance(c, int) for c in ctx),
              "eval.contexts", "must be 'all' or a list of token ids")
        check(all(0 <= c < cfg["n_contexts"] for c in ctx), "eval.contexts",
              "token out of range")
    mask = cfg["trainer"]["param_mask"]
    if mask != "all":
        check(isinstance(mask, list) and all(isinstance(m, str) for m in mask),
              "trainer.param_mask", "must be 'all' or a list of name patterns")
    # dataclass validators catch the numeric ranges
    train_config_from(cfg)
    return cfg


def snapshot_yaml(cfg: dict) -> str:
    """Canonical byte-stable YAML serialization of a resolved config."""
    return yaml.safe_dump(cfg, sort_keys=True, default_flow_style=False)
