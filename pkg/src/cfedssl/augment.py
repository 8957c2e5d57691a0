"""Weak/strong views of traffic feature vectors for contrastive pairs.

Weak views add small Gaussian noise to the numeric components; strong views
add larger noise plus random feature masking (masking may hit one-hot
entries, the noise never does). One noise scale pair is drawn per batch and
applied with per-sample independent noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class AugmentationPolicy:
    weak_sigma_range: tuple[float, float] = (0.001, 0.05)
    strong_sigma_range: tuple[float, float] = (0.10, 0.40)
    strong_mask_fraction: float = 0.10
    clip_to_unit: bool = True

    def __post_init__(self):
        wlo, whi = self.weak_sigma_range
        slo, shi = self.strong_sigma_range
        if wlo < 0 or slo < 0 or whi < wlo or shi < slo:
            raise ConfigError("augmentation sigma ranges must be ordered and >= 0")
        if whi >= shi and shi > 0:
            raise ConfigError("weak sigma range must sit strictly below strong")
        if not 0 <= self.strong_mask_fraction < 1:
            raise ConfigError("strong_mask_fraction must be in [0, 1)")


@dataclass(frozen=True)
class AugmentedPair:
    a: np.ndarray          # weak view
    b: np.ndarray          # strong view
    source_index: int


def _noise(X: np.ndarray, sigma: float, rng: np.random.Generator,
           numeric_mask: np.ndarray | None, clip: bool) -> np.ndarray:
    out = X.astype(np.float32, copy=True)
    if sigma > 0:
        noise = rng.normal(0.0, sigma, size=X.shape).astype(np.float32)
        if numeric_mask is not None:
            noise[..., ~numeric_mask] = 0.0
        out += noise
    if clip:
        np.clip(out, 0.0, 1.0, out=out)
    return out


def weak_augment(x: np.ndarray, sigma: float, rng: np.random.Generator,
                 numeric_mask: np.ndarray | None = None,
                 clip_to_unit: bool = True) -> np.ndarray:
    """Gaussian noise (std sigma) on numeric components; one-hots untouched."""
    return _noise(np.asarray(x), sigma, rng, numeric_mask, clip_to_unit)


def strong_augment(x: np.ndarray, sigma: float, mask_fraction: float,
                   rng: np.random.Generator,
                   numeric_mask: np.ndarray | None = None,
                   clip_to_unit: bool = True) -> np.ndarray:
    """Strong Gaussian noise plus zeroing of floor(mask_fraction * D) features."""
    x = np.asarray(x)
    out = _noise(x, sigma, rng, numeric_mask, clip_to_unit)
    d = x.shape[-1]
    n_masked = int(mask_fraction * d)
    if n_masked > 0:
        if out.ndim == 1:
            out[rng.choice(d, size=n_masked, replace=False)] = 0.0
        else:
            scores = rng.random(out.shape)
            drop = np.argpartition(scores, n_masked - 1, axis=-1)[..., :n_masked]
            np.put_along_axis(out, drop, 0.0, axis=-1)
    return out


def draw_sigmas(policy: AugmentationPolicy,
                rng: np.random.Generator) -> tuple[float, float]:
    """One (weak, strong) noise-scale pair, redrawn per batch."""
    return (
        float(rng.uniform(*policy.weak_sigma_range)),
        float(rng.uniform(*policy.strong_sigma_range)),
    )


def augment_batch(X: np.ndarray, policy: AugmentationPolicy,
                  rng: np.random.Generator,
                  numeric_mask: np.ndarray | None = None
                  ) -> tuple[np.ndarray, np.ndarray, tuple[float, float]]:
    """Vectorized weak/strong views for a whole batch; shared batch sigmas."""
    sigma_w, sigma_s = draw_sigmas(policy, rng)
    a = weak_augment(X, sigma_w, rng, numeric_mask, policy.clip_to_unit)
    b = strong_augment(X, sigma_s, policy.strong_mask_fraction, rng,
                       numeric_mask, policy.clip_to_unit)
    return a, b, (sigma_w, sigma_s)


def make_pairs(batch: np.ndarray, policy: AugmentationPolicy,
               rng: np.random.Generator,
               numeric_mask: np.ndarray | None = None) -> list[AugmentedPair]:
    """One weak/strong pair per sample; all pairs share the batch sigmas."""
    batch = np.asarray(batch)
    if batch.ndim != 2 or batch.shape[0] == 0:
        raise ConfigError("make_pairs expects a non-empty (B, D) batch")
    a, b, _ = augment_batch(batch, policy, rng, numeric_mask)
    return [AugmentedPair(a[i], b[i], i) for i in range(batch.shape[0])]
