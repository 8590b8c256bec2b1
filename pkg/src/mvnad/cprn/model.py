"""Prototype extraction (UCP), prototype-guided reconstruction (CPGA) and losses.

Symbols follow the model description: ``Q_learn`` are the M learnable query
tokens, ``P_ucmp`` the unified prototypes, ``E_l`` the encoder skip features of
level l and ``F~_l`` their reconstructions.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from mvnad.core.nn import (
    AttentionTrace,
    ParameterSet,
    add_attention_params,
    add_ffn_params,
    feed_forward,
    init_matrix,
    multi_head_attention,
)
from mvnad.core.rng import Rng, mix64
from mvnad.core.tensor import (
    NumericError,
    Parameter,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    concat_rows,
    cosine_rows,
    log,
    mean_of,
    mean_rows,
    mul,
    scale,
    tmean,
    tsum,
)

MODALITY_MODES = ("rgb_nv", "rgb_only", "nv_only", "naive_concat")
ABLATIONS = ("rgb_only", "nv_only", "naive_concat", "ucp_no_lp", "full")
SCORE_MODES = ("recon_loss", "max_map")
RESIDUALS = ("prototype", "skip")
RECON_STREAMS = ("both", "rgb")
MAP_SOURCES = ("level_mean", "final")


@dataclass(frozen=True)
class TrainConfig:
    lambda_p: float = 0.1
    eps_entropy: float = 1e-8
    prototypes: int = 8
    modality_mode: str = "rgb_nv"
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 1e-4
    grad_clip: float = 1.0  # global norm; 0 disables
    steps: int = 300
    batch_size: int = 8
    smoothing_sigma: float = 4.0
    score_mode: str = "recon_loss"
    heads: int = 2
    ffn_mult: int = 2
    tied_branches: bool = False
    residual: str = "prototype"
    recon_streams: str = "both"
    map_source: str = "level_mean"  # features compared by the anomaly map
    seed: int = 0

    def __post_init__(self):
        if self.lambda_p < 0:
            raise ValueError("lambda_p must be >= 0")
        if self.eps_entropy <= 0:
            raise ValueError("eps_entropy must be > 0")
        if self.prototypes < 1:
            raise ValueError("prototypes must be >= 1")
        for name, allowed in (("modality_mode", MODALITY_MODES), ("score_mode", SCORE_MODES),
                              ("residual", RESIDUALS), ("recon_streams", RECON_STREAMS),
                              ("map_source", MAP_SOURCES)):
            if getattr(self, name) not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("steps must be >= 0 and batch_size >= 1")

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def ucp_streams(self) -> tuple[str, ...]:
        return {"rgb_nv": ("rgb", "nv"), "rgb_only": ("rgb",), "nv_only": ("nv",), "naive_concat": ()}[self.modality_mode]

    @property
    def target_streams(self) -> tuple[str, ...]:
        if self.modality_mode == "rgb_only":
            return ("rgb",)
        if self.modality_mode == "nv_only":
            return ("nv",)
        return ("rgb", "nv") if self.recon_streams == "both" else ("rgb",)

    @property
    def input_streams(self) -> tuple[str, ...]:
        return {"rgb_only": ("rgb",), "nv_only": ("nv",)}.get(self.modality_mode, ("rgb", "nv"))


def ablation_mode(config: TrainConfig, mode: str) -> TrainConfig:
    """Configuration for one ablation row; everything else is left as given."""
    if mode not in ABLATIONS:
        raise ValueError(f"unknown ablation mode {mode!r}; expected one of {ABLATIONS}")
    if mode == "ucp_no_lp":
        return replace(config, modality_mode="rgb_nv", lambda_p=0.0)
    if mode == "full":
        return replace(config, modality_mode="rgb_nv")
    return replace(config, modality_mode=mode)


# --- parameters -------------------------------------------------------------------


def init_params(cfg: TrainConfig, dim: int, levels: int, seed: int | None = None) -> ParameterSet:
    """Bank and decoder parameters; deterministic in the seed."""
    rng = Rng(mix64(cfg.seed if seed is None else seed, 0xC9), 0x9A)
    ps = ParameterSet()
    if cfg.ucp_streams:
        ps["bank.Q_learn"] = Parameter(rng.gaussian_array((cfg.prototypes, dim)))
        add_attention_params(ps, "bank.attn", dim, rng)
        if len(cfg.ucp_streams) == 2 and not cfg.tied_branches:
            ps["bank.attn_nv.W_K"] = Parameter(init_matrix(rng, dim, dim))
            ps["bank.attn_nv.W_V"] = Parameter(init_matrix(rng, dim, dim))
        add_ffn_params(ps, "bank.ffn", dim, cfg.ffn_mult, rng)
    for s in cfg.target_streams:
        for l in range(levels):
            add_attention_params(ps, f"dec.{s}.{l}.attn", dim, rng)
            add_ffn_params(ps, f"dec.{s}.{l}.ffn", dim, cfg.ffn_mult, rng)
    return ps


# --- forward pieces -----------------------------------------------------------------


@dataclass
class UcpRecord:
    """Per-branch attention of the learnable queries over each stream's tokens."""

    branches: dict[str, AttentionTrace] = field(default_factory=dict)


def ucp_forward(
    bank: ParameterSet,
    f_rgb,
    f_nv,
    heads: int = 1,
    tied: bool = False,
) -> tuple[Tensor, UcpRecord]:
    """P_ucmp = FFN(LayerNorm(Q + mean of the present branches' attention outputs)).

    ``bank`` is scoped to the bank parameters (``Q_learn``, ``attn.*``,
    optional ``attn_nv.*``, ``ffn.*``). Pass None for an absent stream.
    """
    q = bank["Q_learn"]
    d = q.shape[1]
    attn = bank.scoped("attn")
    nv_kv = bank.scoped("attn_nv") if ("attn_nv.W_K" in bank and not tied) else None
    record = UcpRecord()
    outs = []
    for name, f in (("rgb", f_rgb), ("nv", f_nv)):
        if f is None:
            continue
        f = as_tensor(f)
        if f.ndim != 2 or f.shape[1] != d:
            raise ShapeError(f"{name} features {f.shape} do not match prototype dim {d}")
        tr = AttentionTrace()
        kv = nv_kv if (name == "nv" and f_rgb is not None) else None
        outs.append(multi_head_attention(q, f, f, attn, heads, trace=tr, key_weights=kv))
        record.branches[name] = tr
    if not outs:
        raise ValueError("ucp_forward needs at least one feature stream")
    avg = outs[0] if len(outs) == 1 else scale(add(outs[0], outs[1]), 0.5)
    return feed_forward(add(q, avg), bank.scoped("ffn")), record


def cpga_forward(
    e_l,
    p_ucmp,
    block: ParameterSet,
    heads: int = 1,
    residual: str = "prototype",
    trace: AttentionTrace | None = None,
) -> Tensor:
    """F' = Attention(E_l, P, P) followed by a residual FFN.

    ``residual="skip"``: F~ = F'' + FFN(LN(F'')) with F'' = E_l + F'.
    ``residual="prototype"``: F~ = F' + FFN(LN(F')); the query features do not
    bypass the prototype bottleneck.
    """
    e_l, p_ucmp = as_tensor(e_l), as_tensor(p_ucmp)
    if e_l.ndim != 2 or p_ucmp.ndim != 2 or e_l.shape[1] != p_ucmp.shape[1]:
        raise ShapeError(f"cpga shapes: E {e_l.shape}, P {p_ucmp.shape}")
    f1 = multi_head_attention(e_l, p_ucmp, p_ucmp, block.scoped("attn"), heads, trace=trace)
    base = add(e_l, f1) if residual == "skip" else f1
    return add(base, feed_forward(base, block.scoped("ffn")))


def assignment_distribution(weights) -> Tensor:
    """q_j = token-average of the attention each token pays to prototype j."""
    w = as_tensor(weights)
    if w.ndim != 2:
        raise ShapeError(f"assignment weights must be N x M, got {w.shape}")
    return mean_rows(w)


def loss_recon(targets, recons) -> Tensor:
    """Mean over tokens of 1 - cos(level-mean target, level-mean reconstruction)."""
    if len(targets) != len(recons) or not targets:
        raise ShapeError(f"{len(targets)} target levels vs {len(recons)} reconstructions")
    t = mean_of([as_tensor(x) for x in targets])
    r = mean_of([as_tensor(x) for x in recons])
    cos = cosine_rows(t, r)
    return tmean(add(scale(cos, -1.0), 1.0))


def loss_entropy(q, eps: float = 1e-8) -> Tensor:
    """L_p = sum_j q_j log(q_j + eps)."""
    if eps <= 0:
        raise ValueError("eps must be > 0")
    q = as_tensor(q)
    if np.any(q.data < -1e-9) or np.any(q.data > 1 + 1e-9):
        raise ValueError(f"assignment distribution has entries outside [0, 1]: {q.data}")
    return tsum(mul(q, log(add(q, eps))))


def token_distance(target, recon) -> np.ndarray:
    """Per-token cosine distance in [0, 2] (no gradient)."""
    a = np.asarray(target.data if isinstance(target, Tensor) else target)
    b = np.asarray(recon.data if isinstance(recon, Tensor) else recon)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise NumericError("cosine distance of a zero-norm vector")
    c = np.clip((a * b).sum(axis=1) / (na * nb), -1.0, 1.0)
    return 1.0 - c


# --- whole-model forward ---------------------------------------------------------------


@dataclass
class ForwardResult:
    loss_total: Tensor
    loss_r: Tensor
    loss_p: Tensor
    q: Tensor | None
    recon: dict[str, list[Tensor]]
    token_maps: dict[str, np.ndarray]
    ucp_evaluated: bool


def model_forward(params: ParameterSet, cfg: TrainConfig, pyramids: dict[str, list[np.ndarray]]) -> ForwardResult:
    """Forward one view. ``pyramids`` maps stream name to its L levels (N x D)."""
    for s in cfg.input_streams:
        if pyramids.get(s) is None:
            raise ValueError(f"mode {cfg.modality_mode} needs {s} features")
    feats = {s: [Tensor(np.asarray(x)) for x in pyramids[s]] for s in cfg.input_streams}
    levels = len(next(iter(feats.values())))
    ucp_evaluated = False
    if cfg.modality_mode == "naive_concat":
        keys = concat_rows([feats["rgb"][-1], feats["nv"][-1]])
    else:
        bank = params.scoped("bank")
        f_rgb = feats["rgb"][-1] if "rgb" in cfg.ucp_streams else None
        f_nv = feats["nv"][-1] if "nv" in cfg.ucp_streams else None
        keys, _ = ucp_forward(bank, f_rgb, f_nv, cfg.heads, cfg.tied_branches)
        ucp_evaluated = True
    recon: dict[str, list[Tensor]] = {}
    losses = []
    qs = []
    maps = {}
    for s in cfg.target_streams:
        outs = []
        for l in range(levels):
            tr = AttentionTrace() if l == 0 else None
            outs.append(cpga_forward(feats[s][l], keys, params.scoped(f"dec.{s}.{l}"), cfg.heads, cfg.residual, tr))
            if tr is not None and ucp_evaluated:
                qs.append(assignment_distribution(tr.tensor))
        recon[s] = outs
        losses.append(loss_recon(feats[s], outs))
        if cfg.map_source == "final":
            maps[s] = token_distance(feats[s][-1], outs[-1])
        else:
            # per-token form of loss_recon: its mean over tokens is this stream's L_r
            maps[s] = token_distance(np.mean([f.data for f in feats[s]], axis=0),
                                     np.mean([o.data for o in outs], axis=0))
    loss_r = mean_of(losses)
    if qs:
        q = mean_of(qs)
        loss_p = loss_entropy(q, cfg.eps_entropy)
    else:
        q = None
        loss_p = Tensor(np.array(0.0))
    total = add(loss_r, scale(loss_p, cfg.lambda_p)) if cfg.lambda_p else loss_r
    return ForwardResult(total, loss_r, loss_p, q, recon, maps, ucp_evaluated)
