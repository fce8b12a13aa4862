"""Run-directory orchestration: build components from a config, train, evaluate.

A run directory is self-describing: the stored config snapshot plus the seed
reproduce its metrics bit-exactly on the same build.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import os
from dataclasses import dataclass
from pathlib import Path

import yaml

from . import figures
from .concepts import dump_dataset, gen_glyph, gen_mixture2d
from .config import apply_overrides, snapshot_yaml, train_config_from, validate_config
from .diffusion import LatentCodec, make_schedule, schedule_table
from .evaluate import generate_samples, make_report, report_to_text, train_context_probe
from .networks import ConditionTable, CriticNet, PolicyNet, load_checkpoint, save_checkpoint
from .numerics import RngStream
from .rewards import FeatureEncoder
from .trainer import Trainer

__all__ = ["RunDirectory", "build_components", "execute_train", "execute_eval",
           "execute_ablate", "default_out_root", "ENV_OUT_ROOT"]

ENV_OUT_ROOT = "DPGDIFF_OUT"


def default_out_root() -> Path:
    return Path(os.environ.get(ENV_OUT_ROOT, "runs"))


@dataclass
class RunDirectory:
    """Paths inside one run's output directory."""

    path: Path

    @property
    def config_path(self) -> Path:
        return self.path / "config.yaml"

    @property
    def metrics_path(self) -> Path:
        return self.path / "metrics.jsonl"

    @property
    def dataset_path(self) -> Path:
        return self.path / "dataset.tsv"

    def checkpoint_path(self, name: str) -> Path:
        return self.path / "checkpoints" / f"{name}.json"

    @property
    def eval_dir(self) -> Path:
        return self.path / "eval"


def config_digest(cfg: dict) -> str:
    return hashlib.sha256(snapshot_yaml(cfg).encode()).hexdigest()[:12]


def build_components(cfg: dict) -> dict:
    """Instantiate dataset, schedule, codec, networks and encoder from a config."""
    validate_config(cfg)
    seed = int(cfg["seed"])
    domain = cfg["domain"]
    if domain == "mixture2d":
        refs = gen_mixture2d(seed, cfg["concept_id"])
        latent_dim = 2
    else:
        refs = gen_glyph(seed, cfg["concept_id"], cfg["glyph_size"])
        latent_dim = cfg["glyph_size"] ** 2

    s = cfg["schedule"]
    schedule = make_schedule(s["T"], s["beta_start"], s["beta_end"], s["kind"])

    if cfg["codec"]["mode"] == "identity":
        codec = LatentCodec.identity()
    else:
        codec = LatentCodec.linear(latent_dim, RngStream(seed, "codec"))

    emb = cfg["embedding"]
    cond_dim = emb["concept_dim"] + emb["context_dim"]
    table = ConditionTable(cfg["n_concepts"], cfg["n_contexts"],
                           emb["concept_dim"], emb["context_dim"],
                           stream=RngStream(seed, "init/table"))
    policy = PolicyNet(latent_dim, tuple(cfg["policy"]["hidden"]),
                       cfg["policy"]["t_emb_dim"], cond_dim,
                       stream=RngStream(seed, "init/policy"))
    critic = CriticNet(latent_dim, tuple(cfg["critic"]["hidden"]),
                       cfg["policy"]["t_emb_dim"], cond_dim,
                       stream=RngStream(seed, "init/critic"))
    enc = FeatureEncoder(latent_dim, cfg["encoder"]["feature_dim"],
                         cfg["encoder"]["hidden_dim"], cfg["encoder"]["seed"])
    return {
        "refs": refs, "schedule": schedule, "codec": codec, "table": table,
        "policy": policy, "critic": critic, "enc": enc,
        "latent_dim": latent_dim,
    }


def _write_metrics(path: Path, metrics: list[dict]) -> None:
    with open(path, "w") as f:
        for row in metrics:
            f.write(json.dumps(row) + "\n")


def _write_plotdata(run: RunDirectory, metrics: list[dict]) -> list[Path]:
    """One two-column (step, value) text file per scalar metric."""
    run.eval_dir.mkdir(parents=True, exist_ok=True)
    names = sorted({k for row in metrics for k in row
                    if k not in ("step", "t", "kind", "value")})
    written = []
    for name in names:
        out = run.eval_dir / f"curve_{name}.csv"
        with open(out, "w") as f:
            f.write(f"step,{name}\n")
            for row in metrics:
                if name in row and row[name] is not None:
                    f.write(f"{row['step']},{row[name]!r}\n")
        written.append(out)
    return written


def execute_train(cfg: dict, out_dir: Path | None = None,
                  render: bool = True) -> RunDirectory:
    """Train per the config and write a complete run directory."""
    validate_config(cfg)
    if out_dir is None:
        out_dir = default_out_root() / f"train-{config_digest(cfg)}"
    run = RunDirectory(Path(out_dir))
    run.path.mkdir(parents=True, exist_ok=True)
    (run.path / "checkpoints").mkdir(exist_ok=True)

    run.config_path.write_text(snapshot_yaml(cfg))
    parts = build_components(cfg)
    dump_dataset(run.dataset_path, parts["refs"])

    tcfg = train_config_from(cfg)
    algo = cfg["trainer"]["algorithm"]
    critic = parts["critic"] if algo == "dpg" else None
    trainer = Trainer(parts["policy"], critic, parts["table"], parts["schedule"],
                      parts["refs"], tcfg, enc=parts["enc"], codec=parts["codec"],
                      n_train_contexts=cfg["n_contexts"])
    save_checkpoint(run.checkpoint_path("step0"), parts["policy"], critic,
                    parts["table"], step=0)
    state = trainer.run(algo)
    save_checkpoint(run.checkpoint_path("final"), state.policy, state.critic,
                    state.table, step=state.step,
                    rng_counters={"data/noise": trainer.s_noise.counter})
    _write_metrics(run.metrics_path, state.metrics)
    _write_plotdata(run, state.metrics)
    if render:
        figures.render_training_curves(state.metrics, run.eval_dir / "training_curves.png")
    return run


def execute_eval(run_dir: Path, checkpoint: str = "final",
                 seed: int | None = None, render: bool = True) -> Path:
    """Evaluate a checkpoint of an existing run; writes report and plot files."""
    run = RunDirectory(Path(run_dir))
    if not run.config_path.exists():
        raise FileNotFoundError(f"no config snapshot at {run.config_path}")
    cfg = yaml.safe_load(run.config_path.read_text())
    ckpt_path = run.checkpoint_path(checkpoint)
    if not ckpt_path.exists():
        raise FileNotFoundError(f"missing checkpoint {ckpt_path}")

    parts = build_components(cfg)
    restored = load_checkpoint(ckpt_path)
    policy, table = restored["policy"], restored["table"]
    if seed is None:
        seed = int(cfg["eval"]["seed"])

    contexts = cfg["eval"]["contexts"]
    if contexts == "all":
        contexts = list(range(cfg["n_contexts"]))
    probe = train_context_probe([parts["refs"]], cfg["n_contexts"],
                                iters=cfg["eval"]["probe_iters"])
    report = make_report(policy, table, [parts["refs"]], parts["schedule"],
                         parts["enc"], probe, contexts, seed,
                         n_per_case=cfg["eval"]["n_per_case"],
                         mode=cfg["eval"]["mode"], codec=parts["codec"])
    run.eval_dir.mkdir(parents=True, exist_ok=True)
    out = run.eval_dir / f"report-{checkpoint}-seed{seed}.txt"
    out.write_text(report_to_text(report))
    if render:
        gen = {
            ctx: generate_samples(
                policy, table, parts["refs"].concept_token, ctx, parts["schedule"],
                seed, count=cfg["eval"]["n_per_case"], mode=cfg["eval"]["mode"],
                codec=parts["codec"])
            for ctx in contexts
        }
        figures.render_eval_samples(parts["refs"], gen,
                                    run.eval_dir / f"samples-{checkpoint}-seed{seed}.png")
    return out


def execute_ablate(cfg: dict, grid: dict[str, list], out_root: Path | None = None,
                   render: bool = True) -> list[RunDirectory]:
    """Cartesian-product runs sharing the base seed, plus a comparison table."""
    if not grid:
        raise ValueError("ablate: empty grid")
    validate_config(cfg)
    if out_root is None:
        out_root = default_out_root() / f"ablate-{config_digest(cfg)}"
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)

    keys = sorted(grid)
    runs: list[tuple[str, RunDirectory]] = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        sets = [f"{k}={v}" for k, v in zip(keys, combo)]
        cell_cfg = validate_config(apply_overrides(cfg, sets))
        name = "_".join(f"{k.split('.')[-1]}={v}" for k, v in zip(keys, combo))
        cell = execute_train(cell_cfg, out_root / name, render=render)
        execute_eval(cell.path, "final", render=render)
        runs.append((name, cell))

    table_path = out_root / "comparison.tsv"
    with open(table_path, "w") as f:
        f.write("cell\timage_alignment\tcondition_alignment\tfinal_metrics\n")
        for name, cell in runs:
            seed = yaml_eval_seed(cell)
            report = (cell.eval_dir / f"report-final-seed{seed}.txt").read_text()
            fields = dict(line.split("=", 1) for line in report.splitlines() if "=" in line)
            last = _final_scalar_row(cell)
            f.write(f"{name}\t{fields['image_alignment']}\t"
                    f"{fields['condition_alignment']}\t{json.dumps(last)}\n")
    if render:
        figures.render_ablation_curves(
            {name: _load_metrics(cell.metrics_path) for name, cell in runs},
            out_root / "comparison.png",
        )
    return [cell for _, cell in runs]


def yaml_eval_seed(run: RunDirectory) -> int:
    cfg = yaml.safe_load(run.config_path.read_text())
    return int(cfg["eval"]["seed"])


def _load_metrics(path: Path) -> list[dict]:
    return [json.loads(line) for line in path.read_text().splitlines() if line]


def _final_scalar_row(run: RunDirectory) -> dict:
    rows = [r for r in _load_metrics(run.metrics_path) if "kind" not in r]
    return rows[-1] if rows else {}


def export_schedule_text(cfg: dict) -> str:
    validate_config(cfg)
    s = cfg["schedule"]
    return schedule_table(make_schedule(s["T"], s["beta_start"], s["beta_end"], s["kind"]))
