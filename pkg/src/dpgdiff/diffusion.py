"""Noise schedules, the forward noising process, clean-sample recovery and samplers.

Timestep indexing is zero-based everywhere: t ranges over {0, ..., T-1} and all
formulas read the cumulative retention product ``alpha_bar`` at the drawn index.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .numerics import RngStream, Tensor, as_array

__all__ = [
    "DiffusionSchedule",
    "LatentCodec",
    "make_schedule",
    "forward_diffuse",
    "predict_x0",
    "recon_objective",
    "sample",
    "schedule_table",
]

_ALPHA_BAR_FLOOR = 1e-12


@dataclass(frozen=True)
class DiffusionSchedule:
    """Per-timestep noise coefficients: beta, alpha = 1 - beta, alpha_bar = prod(alpha)."""

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def T(self) -> int:
        return len(self.beta)


def make_schedule(
    T: int,
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
    kind: str = "linear",
) -> DiffusionSchedule:
    """Build a noise schedule of T steps; linear betas or the cosine shape."""
    if T < 2:
        raise ValueError(f"make_schedule: T must be >= 2, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"make_schedule: need 0 < beta_start <= beta_end < 1, "
            f"got ({beta_start}, {beta_end})"
        )
    if kind == "linear":
        beta = np.linspace(beta_start, beta_end, T)
    elif kind == "cosine":
        # Squared-cosine retention curve; betas derived from consecutive ratios
        # and clipped away from 1 to keep every alpha positive.
        s = 0.008
        grid = np.arange(T + 1, dtype=np.float64) / T
        f = np.cos((grid + s) / (1.0 + s) * np.pi / 2.0) ** 2
        beta = np.clip(1.0 - f[1:] / f[:-1], beta_start, 0.999)
    else:
        raise ValueError(f"make_schedule: unknown kind {kind!r}")
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return DiffusionSchedule(beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def _check_t(t, T: int) -> np.ndarray:
    t = np.asarray(t, dtype=np.int64)
    if t.size and (t.min() < 0 or t.max() >= T):
        raise ValueError(f"timestep out of range: {t} not in [0, {T})")
    return t


def forward_diffuse(x0, t, z, s: DiffusionSchedule) -> np.ndarray:
    """Noise a clean sample to step t: sqrt(ab_t) * x0 + sqrt(1 - ab_t) * z.

    Accepts a single sample with integer t, or a batch (B, D) with t of shape (B,).
    """
    x0, z = as_array(x0), as_array(z)
    if x0.shape != z.shape:
        raise ValueError(f"forward_diffuse: shape mismatch {x0.shape} vs {z.shape}")
    t = _check_t(t, s.T)
    ab = s.alpha_bar[t]
    if t.ndim > 0:
        ab = ab.reshape(t.shape + (1,) * (x0.ndim - t.ndim))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * z


def predict_x0(x_t, z_hat, t, s: DiffusionSchedule) -> np.ndarray:
    """One-shot clean-sample estimate: (x_t - sqrt(1 - ab_t) * z_hat) / sqrt(ab_t)."""
    x_t, z_hat = as_array(x_t), as_array(z_hat)
    if x_t.shape != z_hat.shape:
        raise ValueError(f"predict_x0: shape mismatch {x_t.shape} vs {z_hat.shape}")
    t = _check_t(t, s.T)
    ab = s.alpha_bar[t]
    if np.any(ab < _ALPHA_BAR_FLOOR):
        raise ValueError(f"predict_x0: alpha_bar below {_ALPHA_BAR_FLOOR}, numerically singular")
    if t.ndim > 0:
        ab = ab.reshape(t.shape + (1,) * (x_t.ndim - t.ndim))
    return (x_t - np.sqrt(1.0 - ab) * z_hat) / np.sqrt(ab)


def recon_objective(z, z_hat):
    """Mean squared error between target noise and prediction.

    Returns a recorded scalar Tensor when either argument is a Tensor, so the
    baseline training loss can flow gradients; plain floats otherwise.
    """
    if isinstance(z, Tensor) or isinstance(z_hat, Tensor):
        diff = (z if isinstance(z, Tensor) else Tensor(as_array(z))) - z_hat
        return diff.square().mean()
    z, z_hat = as_array(z), as_array(z_hat)
    if z.shape != z_hat.shape:
        raise ValueError(f"recon_objective: shape mismatch {z.shape} vs {z_hat.shape}")
    return float(np.mean((z - z_hat) ** 2))


def sample(
    predict_noise: Callable[[np.ndarray, int], np.ndarray],
    shape: tuple[int, ...],
    s: DiffusionSchedule,
    stream: RngStream,
    mode: str = "ancestral",
) -> np.ndarray:
    """Generate one sample by iterating the reverse chain from pure noise.

    ``predict_noise(x, t)`` is the denoiser under a fixed condition. The
    ancestral mode follows the stochastic reverse update with posterior
    variance (which vanishes at t=0); the deterministic mode re-noises the
    clean-sample estimate with the predicted noise itself, so a fixed stream
    gives bit-reproducible output.
    """
    if mode not in ("ancestral", "deterministic"):
        raise ValueError(f"sample: unknown mode {mode!r}")
    x = stream.gaussian(shape)
    T = s.T
    for t in range(T - 1, -1, -1):
        z_hat = predict_noise(x, t)
        ab = s.alpha_bar[t]
        ab_prev = s.alpha_bar[t - 1] if t > 0 else 1.0
        if mode == "deterministic":
            x0_hat = (x - np.sqrt(1.0 - ab) * z_hat) / np.sqrt(ab)
            x = np.sqrt(ab_prev) * x0_hat + np.sqrt(1.0 - ab_prev) * z_hat
        else:
            mean = (x - s.beta[t] / np.sqrt(1.0 - ab) * z_hat) / np.sqrt(s.alpha[t])
            var = s.beta[t] * (1.0 - ab_prev) / (1.0 - ab)
            if t > 0:
                x = mean + np.sqrt(var) * stream.gaussian(shape)
            else:
                x = mean
    return x


def schedule_table(s: DiffusionSchedule) -> str:
    """Plain-text table (t, beta, alpha, alpha_bar), one row per timestep."""
    buf = io.StringIO()
    buf.write("t\tbeta\talpha\talpha_bar\n")
    for t in range(s.T):
        buf.write(f"{t}\t{float(s.beta[t])!r}\t{float(s.alpha[t])!r}"
                  f"\t{float(s.alpha_bar[t])!r}\n")
    return buf.getvalue()


@dataclass
class LatentCodec:
    """Map between data space and the space the diffusion runs in.

    Identity by default. The linear mode applies a fixed orthogonal map, which
    keeps encode/decode an exact round trip while still exercising the decode
    path of feature rewards.
    """

    mode: str = "identity"
    weight: np.ndarray | None = None

    @classmethod
    def identity(cls) -> "LatentCodec":
        return cls(mode="identity")

    @classmethod
    def linear(cls, dim: int, stream: RngStream) -> "LatentCodec":
        raw = stream.gaussian((dim, dim))
        q, _ = np.linalg.qr(raw)
        return cls(mode="linear", weight=q)

    def encode(self, x) -> np.ndarray:
        x = as_array(x)
        if self.mode == "identity":
            return x
        return x @ self.weight

    def decode(self, y) -> np.ndarray:
        y = as_array(y)
        if self.mode == "identity":
            return y
        return y @ self.weight.T
