"""Alignment metrics, the context probe, and evaluation-report assembly.

Image alignment is the mean pairwise cosine similarity between encoder
embeddings of generated and reference samples. Condition alignment is the
accuracy of a frozen linear probe at recovering the requested context token
from a generated sample (centered on its concept's reference mean).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .concepts import ConditionSpec, ReferenceSet, apply_context
from .diffusion import DiffusionSchedule, LatentCodec, sample
from .networks import ConditionTable, PolicyNet
from .numerics import RngStream
from .rewards import FeatureEncoder

__all__ = [
    "EvalReport",
    "ContextProbe",
    "train_context_probe",
    "image_alignment",
    "condition_alignment",
    "generate_samples",
    "make_report",
    "report_to_text",
]


def image_alignment(generated, refs: ReferenceSet, enc: FeatureEncoder) -> float:
    """Mean cosine similarity over all (generated, reference) embedding pairs."""
    gen_list = list(generated)
    if not gen_list or not refs.samples:
        raise ValueError("image_alignment: empty inputs")
    g = enc.embed(np.stack([np.asarray(s, dtype=np.float64) for s in gen_list]))
    r = enc.embed(refs.stacked())
    return float(np.mean(g @ r.T))


class ContextProbe:
    """Multinomial logistic regression over concept-centered samples.

    Features are sample minus the concept's reference mean, which makes
    context transforms linearly separable independently of where the concept
    lives. Trained once on ground-truth transformed references, then frozen.
    """

    def __init__(self, n_contexts: int, concept_means: dict[int, np.ndarray]):
        self.n_contexts = n_contexts
        self.concept_means = {int(k): np.asarray(v) for k, v in concept_means.items()}
        self.W: np.ndarray | None = None
        self.b: np.ndarray | None = None
        self.train_accuracy: float | None = None

    @property
    def trained(self) -> bool:
        return self.W is not None

    def _features(self, samples, concepts) -> np.ndarray:
        rows = []
        for s, c in zip(samples, concepts):
            rows.append(np.asarray(s, dtype=np.float64).reshape(-1) - self.concept_means[int(c)])
        return np.stack(rows)

    def fit(self, samples, concepts, labels, iters: int = 400, lr: float = 1.0,
            l2: float = 1e-4) -> float:
        """Full-batch gradient descent on softmax cross-entropy; returns accuracy."""
        X = self._features(samples, concepts)
        y = np.asarray(labels, dtype=np.int64)
        n, d = X.shape
        K = self.n_contexts
        W = np.zeros((d, K))
        b = np.zeros(K)
        onehot = np.eye(K)[y]
        for _ in range(iters):
            logits = X @ W + b
            logits -= logits.max(axis=1, keepdims=True)
            p = np.exp(logits)
            p /= p.sum(axis=1, keepdims=True)
            gl = (p - onehot) / n
            W -= lr * (X.T @ gl + l2 * W)
            b -= lr * gl.sum(axis=0)
        self.W, self.b = W, b
        self.train_accuracy = float(np.mean(self.predict(samples, concepts) == y))
        return self.train_accuracy

    def predict(self, samples, concepts) -> np.ndarray:
        if not self.trained:
            raise ValueError("context probe is untrained")
        X = self._features(samples, concepts)
        return np.argmax(X @ self.W + self.b, axis=1)


def train_context_probe(refsets: list[ReferenceSet], n_contexts: int,
                        iters: int = 400) -> ContextProbe:
    """Fit the probe on every (reference sample, context transform) pair."""
    means = {r.concept_token: r.mean() for r in refsets}
    probe = ContextProbe(n_contexts, means)
    samples, concepts, labels = [], [], []
    for refs in refsets:
        for ctx in range(n_contexts):
            for s in refs.samples:
                samples.append(apply_context(s, ctx, refs.domain))
                concepts.append(refs.concept_token)
                labels.append(ctx)
    probe.fit(samples, concepts, labels, iters=iters)
    return probe


def condition_alignment(generated, conditions: list[ConditionSpec],
                        probe: ContextProbe) -> float:
    """Fraction of generated samples whose probe-predicted context matches."""
    gen_list = list(generated)
    if not gen_list:
        raise ValueError("condition_alignment: empty inputs")
    if len(gen_list) != len(conditions):
        raise ValueError("condition_alignment: one condition per sample required")
    if not probe.trained:
        raise ValueError("condition_alignment: probe is untrained")
    preds = probe.predict(gen_list, [c.concept_token for c in conditions])
    want = np.asarray([c.context_token for c in conditions])
    return float(np.mean(preds == want))


def generate_samples(policy: PolicyNet, table: ConditionTable, concept: int,
                     context: int, schedule: DiffusionSchedule, seed: int,
                     count: int = 8, mode: str = "deterministic",
                     codec: LatentCodec | None = None) -> list[np.ndarray]:
    """Decode `count` reproducible samples for one (concept, context) pair.

    Sampling noise comes from per-sample streams keyed by the pair and the
    sample index, so two runs evaluated with the same seed see identical noise.
    """
    codec = codec if codec is not None else LatentCodec.identity()
    cond = table.vector(concept, context)
    out = []
    for k in range(count):
        stream = RngStream(seed, f"eval/{concept}/{context}/{k}")
        lat = sample(
            lambda x, t: policy.predict(x, t, cond),
            (policy.latent_dim,), schedule, stream, mode=mode,
        )
        out.append(codec.decode(lat))
    return out


@dataclass
class EvalReport:
    image_alignment: float
    condition_alignment: float
    per_concept: dict[int, dict[str, float]]
    n_samples: int
    seed: int

    def __post_init__(self):
        if self.per_concept:
            for key, agg in (("image_alignment", self.image_alignment),
                             ("condition_alignment", self.condition_alignment)):
                mean = float(np.mean([v[key] for v in self.per_concept.values()]))
                if abs(mean - agg) > 1e-12:
                    raise ValueError(f"report aggregate {key} != mean of breakdown")


def make_report(policy: PolicyNet, table: ConditionTable,
                refsets: list[ReferenceSet], schedule: DiffusionSchedule,
                enc: FeatureEncoder, probe: ContextProbe,
                contexts: list[int], seed: int, n_per_case: int = 8,
                mode: str = "deterministic",
                codec: LatentCodec | None = None) -> EvalReport:
    """Generate per-(concept, context) samples and score both alignments."""
    per_concept = {}
    for refs in refsets:
        gen_all, conds = [], []
        for ctx in contexts:
            gen = generate_samples(policy, table, refs.concept_token, ctx,
                                   schedule, seed, count=n_per_case, mode=mode,
                                   codec=codec)
            gen_all.extend(gen)
            conds.extend([ConditionSpec(refs.concept_token, ctx)] * len(gen))
        per_concept[refs.concept_token] = {
            "image_alignment": image_alignment(gen_all, refs, enc),
            "condition_alignment": condition_alignment(gen_all, conds, probe),
        }
    img = float(np.mean([v["image_alignment"] for v in per_concept.values()]))
    cnd = float(np.mean([v["condition_alignment"] for v in per_concept.values()]))
    return EvalReport(
        image_alignment=img, condition_alignment=cnd, per_concept=per_concept,
        n_samples=n_per_case, seed=seed,
    )


def report_to_text(report: EvalReport) -> str:
    """Flat key=value serialization, one entry per line."""
    lines = [
        f"image_alignment={report.image_alignment!r}",
        f"condition_alignment={report.condition_alignment!r}",
        f"n_samples={report.n_samples}",
        f"seed={report.seed}",
    ]
    for token in sorted(report.per_concept):
        for key, val in sorted(report.per_concept[token].items()):
            lines.append(f"concept.{token}.{key}={val!r}")
    return "\n".join(lines) + "\n"
