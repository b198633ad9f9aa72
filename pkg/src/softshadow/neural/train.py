from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..imaging import ShadowTexture, as_unit, bilinear_sample
from .adam import AdamState, adam_step
from .encoding import EncodingConfig, encode_batch, encode_direction, fourier_features
from .mlp import MlpModel, forward, loss_and_grad

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10000
    n_samples: int = 256
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    gamma: float = 0.99977
    seed: int = 0
    interpolation: str = "bilinear"  # or "discrete"

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.interpolation not in ("bilinear", "discrete"):
            raise ValueError("interpolation must be 'bilinear' or 'discrete'")

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.gamma**epoch


@dataclass(frozen=True)
class Architecture:
    s: int = 128
    h: int = 3
    encoding: EncodingConfig = EncodingConfig()


@dataclass
class EpochStats:
    epoch: int
    lr: float
    mean_loss: float
    seconds: float


@dataclass
class TrainResult:
    model: MlpModel
    history: list[EpochStats] = field(default_factory=list)
    forward_passes: int = 0

    @property
    def losses(self) -> list[float]:
        return [e.mean_loss for e in self.history]


def train(
    dataset: list[ShadowTexture],
    cfg: TrainConfig = TrainConfig(),
    arch: Architecture = Architecture(),
    model: MlpModel | None = None,
    on_epoch: Callable[[EpochStats], None] | None = None,
) -> TrainResult:
    """Fit a shadow network to a set of textures.

    Every epoch visits the textures in order; each texture contributes one
    batch of ``cfg.n_samples`` fresh random locations and one Adam step. In
    bilinear mode locations are continuous and targets are interpolated; in
    discrete mode locations are pixel centres and targets are stored texels.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    res = dataset[0].image.shape
    if any(t.image.shape != res for t in dataset):
        raise ValueError("all textures must share one resolution")
    hgt, wid = res

    if model is None:
        model = MlpModel.init(arch.s, arch.h, arch.encoding, seed=cfg.seed)
    enc = model.encoding
    params = model.params
    state = AdamState.zeros_like(params, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    rng = np.random.default_rng(cfg.seed)
    result = TrainResult(model)

    images = [np.asarray(t.image, dtype=np.float64) for t in dataset]
    dir_feats = [encode_direction(as_unit(t.light_dir), enc) for t in dataset]
    discrete = cfg.interpolation == "discrete"
    if discrete:
        # pixel-centre features are fixed, so look them up instead of recomputing
        col_feats = fourier_features((np.arange(wid) + 0.5) / wid, enc.l_pos)
        row_feats = fourier_features((np.arange(hgt) + 0.5) / hgt, enc.l_pos)
        p = 2 * enc.l_pos
        x = np.empty((cfg.n_samples, enc.size))

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = cfg.lr_at(epoch)
        total = 0.0
        for img, df in zip(images, dir_feats):
            if discrete:
                cols = rng.integers(0, wid, cfg.n_samples)
                rows = rng.integers(0, hgt, cfg.n_samples)
                x[:, :p] = col_feats[cols]
                x[:, p : 2 * p] = row_feats[rows]
                x[:, 2 * p :] = df
                y = img[rows, cols]
            else:
                u = rng.random(cfg.n_samples)
                v = rng.random(cfg.n_samples)
                y = bilinear_sample(img, u, v)
                x = _encode(u, v, df, enc)
            loss, grads, _ = loss_and_grad(model, x, y)
            result.forward_passes += len(y)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            adam_step(state, params, grads, lr)
            total += loss
        stats = EpochStats(epoch, lr, total / len(images), time.perf_counter() - t0)
        result.history.append(stats)
        if on_epoch is not None:
            on_epoch(stats)
    return result


def _encode(u, v, dir_feats, enc: EncodingConfig) -> np.ndarray:
    p = 2 * enc.l_pos
    x = np.empty((len(u), enc.size))
    x[:, :p] = fourier_features(u, enc.l_pos)
    x[:, p : 2 * p] = fourier_features(v, enc.l_pos)
    x[:, 2 * p :] = dir_feats
    return x


def render_texture(model: MlpModel, d, resolution: int, chunk: int = 65536) -> ShadowTexture:
    """Evaluate the network at every pixel centre of a ``resolution``-square grid."""
    d = as_unit(d)
    if resolution < 1:
        raise ValueError("resolution must be positive")
    c = (np.arange(resolution) + 0.5) / resolution
    jj, ii = np.meshgrid(c, c, indexing="ij")
    i, j = ii.reshape(-1), jj.reshape(-1)
    dir_feats = encode_direction(d, model.encoding)
    out = np.empty(resolution * resolution)
    for a in range(0, len(i), chunk):
        x = encode_batch(i[a : a + chunk], j[a : a + chunk], d, model.encoding, dir_features=dir_feats)
        out[a : a + chunk] = forward(model, x)
    return ShadowTexture(out.reshape(resolution, resolution), d)
