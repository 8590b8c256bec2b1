"""Model container, training loop and anomaly inference."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from mvnad.core.nn import ParameterSet
from mvnad.core.optim import OptimState, adamw_step, clip_grad_norm
from mvnad.core.rng import Rng, mix64
from mvnad.core.tensor import backward, scale, zero_grads
from mvnad.cprn.encoder import EncoderConfig, FeaturePyramid, FrozenEncoder, encode, grid_shape, image_chw
from mvnad.cprn.model import TrainConfig, init_params, model_forward

Features = dict[str, list[np.ndarray]]


class UntrainedModelError(RuntimeError):
    pass


@dataclass
class AnomalyResult:
    image_score: float
    map: np.ndarray  # H x W, upsampled and smoothed
    map_raw: np.ndarray  # H x W, upsampled, before smoothing; values in [0, 2]
    token_map: np.ndarray  # (H/p) x (W/p)


class CprnModel:
    def __init__(self, encoder_config: EncoderConfig, train_config: TrainConfig, image_hw: tuple[int, int] = (64, 64)):
        self.encoder_config = encoder_config
        self.config = train_config
        self.image_hw = tuple(image_hw)
        grid_shape(encoder_config, *self.image_hw)
        self.encoders = {m: FrozenEncoder(encoder_config, m) for m in ("rgb", "nv")}
        self.params: ParameterSet = init_params(train_config, encoder_config.embed_dim, encoder_config.levels)
        self.optim = OptimState.for_params(
            list(self.params.values()),
            lr=train_config.lr,
            beta1=train_config.beta1,
            beta2=train_config.beta2,
            eps=train_config.adam_eps,
            weight_decay=train_config.weight_decay,
        )
        self.steps_done = 0
        self.trained = False
        self.ucp_calls = 0

    # -- features --
    def encoder_hashes(self) -> dict[str, str]:
        return {m: e.param_hash() for m, e in self.encoders.items()}

    def features(self, rgb: np.ndarray | None, nv: np.ndarray | None) -> Features:
        """Encode H x W x 3 images; absent streams may be None when the mode ignores them."""
        out: Features = {}
        for name, img in (("rgb", rgb), ("nv", nv)):
            if img is None:
                continue
            img = np.asarray(img, dtype=np.float64)
            if img.shape[:2] != self.image_hw:
                raise ValueError(f"{name} image {img.shape[:2]} does not match model size {self.image_hw}")
            out[name] = encode(self.encoders[name], image_chw(img)).levels
        return out

    @staticmethod
    def from_pyramids(rgb: FeaturePyramid | None, nv: FeaturePyramid | None) -> Features:
        return {k: p.levels for k, p in (("rgb", rgb), ("nv", nv)) if p is not None}

    def forward(self, feats: Features):
        res = model_forward(self.params, self.config, feats)
        if res.ucp_evaluated:
            self.ucp_calls += 1
        return res


def train_step(model: CprnModel, batch: Sequence[Features]) -> tuple[float, float, float]:
    """One AdamW step on the mean loss over ``batch``; returns (L_total, L_r, L_p)."""
    if not batch:
        raise ValueError("empty batch")
    params = list(model.params.values())
    zero_grads(params)
    totals = []
    for feats in batch:
        res = model.forward(feats)
        totals.append(res)
    n = len(totals)
    lt = sum(r.loss_total.item() for r in totals) / n
    lr_ = sum(r.loss_r.item() for r in totals) / n
    lp = sum(r.loss_p.item() for r in totals) / n
    for r in totals:
        # average of per-view losses: scale the seed gradient by 1/n
        _backward_scaled(r.loss_total, 1.0 / n)
    if model.config.grad_clip > 0:
        clip_grad_norm(params, model.config.grad_clip)
    adamw_step(params, [p.grad for p in params], model.optim)
    model.steps_done += 1
    model.trained = True
    return lt, lr_, lp


def _backward_scaled(loss, factor: float) -> None:
    backward(scale(loss, factor))


def fit(
    model: CprnModel,
    train_features: Sequence[Features],
    steps: int | None = None,
    log: Callable[[int, float, float, float], None] | None = None,
) -> list[tuple[int, float, float, float]]:
    """Run ``steps`` train steps with seeded batch sampling; returns the loss history."""
    if not train_features:
        raise ValueError("no training samples")
    cfg = model.config
    steps = cfg.steps if steps is None else steps
    history = []
    for _ in range(steps):
        step = model.steps_done + 1
        rng = Rng(mix64(cfg.seed, 0xBA7C, step), 0x5)
        size = min(cfg.batch_size, len(train_features))
        idx = [rng.randint(len(train_features)) for _ in range(size)]
        lt, lr_, lp = train_step(model, [train_features[i] for i in idx])
        history.append((step, lt, lr_, lp))
        if log is not None:
            log(step, lt, lr_, lp)
    return history


def bilinear_upsample(grid: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Half-pixel-centred bilinear resize with edge clamping."""
    gh, gw = grid.shape
    h, w = out_hw

    def axis(n_out, n_in):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        i0 = np.floor(src).astype(int)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    r0, r1, fr = axis(h, gh)
    c0, c1, fc = axis(w, gw)
    top = grid[r0][:, c0] * (1 - fc) + grid[r0][:, c1] * fc
    bot = grid[r1][:, c0] * (1 - fc) + grid[r1][:, c1] * fc
    return top * (1 - fr)[:, None] + bot * fr[:, None]


def infer(
    model: CprnModel,
    rgb: np.ndarray | None = None,
    nv: np.ndarray | None = None,
    features: Features | None = None,
    allow_untrained: bool = False,
) -> AnomalyResult:
    """Anomaly map and image score for one view."""
    if not model.trained and not allow_untrained:
        raise UntrainedModelError("model has not been trained; load a checkpoint or train first")
    feats = features if features is not None else model.features(rgb, nv)
    res = model.forward(feats)
    token = np.mean([res.token_maps[s] for s in model.config.target_streams], axis=0)
    gh, gw = grid_shape(model.encoder_config, *model.image_hw)
    token = token.reshape(gh, gw)
    raw = np.clip(bilinear_upsample(token, model.image_hw), 0.0, 2.0)
    sigma = model.config.smoothing_sigma
    smooth = gaussian_filter(raw, sigma=sigma, truncate=4.0, mode="nearest") if sigma > 0 else raw.copy()
    if model.config.score_mode == "recon_loss":
        score = res.loss_r.item()
    else:
        score = float(smooth.max())
    return AnomalyResult(score, smooth, raw, token)
