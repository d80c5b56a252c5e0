"""Toy latent diffusion: schedule, layout-conditioned denoiser, masked loss,
AdamW training loop, DDIM sampling with layout-conditional guidance, and
the logistic toy autoencoder.
"""
from __future__ import annotations

import base64
import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .encoders import EncoderConfig, null_encode
from .errors import ConfigurationError, DimensionError, EmptyInputError, NumericError, ValidationError
from .layout import GuidanceSpec, Layout, compose_guidance_map, text_mask
from .numeric import Rng
from .region_attention import RegionTokens, _ordered_tokens, build_plan, layout_regions, region_cross_attention

CHECKPOINT_FORMAT = "layoutgen-checkpoint"
CHECKPOINT_VERSION = 1


# ------------------------------------------------------------------ schedule

@dataclass(frozen=True)
class NoiseSchedule:
    betas: tuple[float, ...]

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64)
        if b.ndim != 1 or len(b) < 1 or np.any(b <= 0) or np.any(b >= 1):
            raise ConfigurationError("betas must be a non-empty list of reals in (0, 1)")
        ab = np.cumprod(1.0 - b)
        if np.any(np.diff(ab) >= 0):
            raise ConfigurationError("cumulative alphas must be strictly decreasing")
        object.__setattr__(self, "_alphas_bar", ab)

    @classmethod
    def linear(cls, T: int = 1000, beta_start: float = 1e-4, beta_end: float = 2e-2) -> "NoiseSchedule":
        return cls(tuple(np.linspace(beta_start, beta_end, T)))

    @property
    def T(self) -> int:
        return len(self.betas)

    def alpha_bar(self, t: int) -> float:
        """ᾱ_t for t in 0..T, with ᾱ_0 = 1 (clean data)."""
        if t == 0:
            return 1.0
        return float(self._alphas_bar[t - 1])

    def sampling_timesteps(self, steps: int) -> list[int]:
        if steps < 1:
            raise ConfigurationError(f"steps must be >= 1, got {steps}")
        ts = np.round(np.linspace(self.T, 1, min(steps, self.T))).astype(int)
        return [int(t) for t in dict.fromkeys(ts.tolist())]


def forward_noise(z0, t: int, schedule: NoiseSchedule, rng: Rng):
    if not 1 <= t <= schedule.T:
        raise ConfigurationError(f"timestep {t} outside [1, {schedule.T}]")
    z0 = np.asarray(z0, dtype=np.float64)
    eps = rng.normal(z0.shape)
    ab = schedule.alpha_bar(t)
    return math.sqrt(ab) * z0 + math.sqrt(1.0 - ab) * eps, eps


# ------------------------------------------------------------------ configs

@dataclass(frozen=True)
class DenoiserConfig:
    H: int = 28
    W: int = 70
    C: int = 3
    blocks: int = 4
    d_model: int = 32
    d_head: int = 32
    d_text: int = 32
    n_heads: int = 1
    t_dim: int = 32
    nonlinearity: str = "silu"
    group_size: int = 8
    lora_rank: int = 128  # recorded only; toy weights train at full rank

    def __post_init__(self):
        if min(self.H, self.W, self.blocks, self.d_model, self.d_head, self.d_text, self.t_dim) < 1:
            raise ConfigurationError("denoiser dimensions must be positive")
        if self.C < 3:
            raise ConfigurationError(f"need at least 3 latent channels, got {self.C}")
        if self.nonlinearity not in ad.NONLINEARITIES:
            raise ConfigurationError(f"unknown nonlinearity {self.nonlinearity!r}")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 8
    epochs: int = 5
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    dropout: float = 0.1
    beta_glyph: float = 1.0
    seed: int = 0
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    T: int = 1000
    lr_decay: str = "none"  # or "cosine": anneal to lr_floor * lr over the run
    lr_floor: float = 0.05

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 1 or self.grad_clip <= 0:
            raise ConfigurationError("lr, batch_size, epochs and grad_clip must be positive")
        if self.weight_decay < 0 or self.beta_glyph <= 0:
            raise ConfigurationError("weight_decay must be >= 0 and beta_glyph > 0")
        if not 0.0 <= self.dropout <= 1.0:
            raise ConfigurationError(f"dropout must lie in [0,1], got {self.dropout}")
        if self.lr_decay not in ("none", "cosine") or not 0.0 <= self.lr_floor <= 1.0:
            raise ConfigurationError(f"unknown lr_decay {self.lr_decay!r} or lr_floor outside [0,1]")

    def lr_at(self, step: int, total: int) -> float:
        if self.lr_decay == "none" or total <= 1:
            return self.lr
        frac = min(step, total - 1) / (total - 1)
        return self.lr * (self.lr_floor + (1.0 - self.lr_floor) * 0.5 * (1.0 + math.cos(math.pi * frac)))


@dataclass(frozen=True)
class SampleConfig:
    steps: int = 50
    seed: int = 0
    guidance: GuidanceSpec | None = None
    global_scale: float = 7.0
    mode: str = "overwrite"
    clip_latent: float | None = 6.0

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigurationError(f"steps must be >= 1, got {self.steps}")


# ------------------------------------------------------------------ conditioning

@dataclass(frozen=True)
class Conditioning:
    """Per-sample conditioning: layout plus its concatenated region tokens."""

    layout: Layout
    tokens: np.ndarray       # [T_total, d_text]
    counts: tuple[int, ...]  # tokens per layer, in z-order
    glyph: np.ndarray        # [T_total] bool, rows that pass through the glyph mapper

    @classmethod
    def build(cls, layout: Layout, region_tokens: Sequence[RegionTokens],
              drop: Sequence[bool] | None = None, enc_cfg: EncoderConfig | None = None):
        toks = _ordered_tokens(layout, region_tokens)
        null = null_encode(enc_cfg or EncoderConfig(d_text=toks[0].tokens.shape[1])).embeddings
        mats, glyph = [], []
        for i, rt in enumerate(toks):
            if drop is not None and drop[i]:
                mats.append(null)
                glyph.append(np.zeros(1, dtype=bool))
            else:
                mats.append(np.asarray(rt.tokens, dtype=np.float64))
                glyph.append(np.full(len(rt.tokens), rt.source == "glyph"))
        return cls(layout, np.concatenate(mats), tuple(len(m) for m in mats), np.concatenate(glyph))

    @classmethod
    def null(cls, layout: Layout, region_tokens, enc_cfg: EncoderConfig | None = None):
        return cls.build(layout, region_tokens, [True] * len(layout.layers), enc_cfg)


# ------------------------------------------------------------------ denoiser

def init_params(cfg: DenoiserConfig, rng: Rng) -> dict[str, np.ndarray]:
    def dense(name, r, c, gain=1.0):
        params[name] = gain * rng.fork(name).normal((r, c)) / math.sqrt(r)

    params: dict[str, np.ndarray] = {}
    dense("w_in", cfg.C, cfg.d_model)
    params["b_in"] = np.zeros(cfg.d_model)
    for l in range(cfg.blocks):
        p = f"blk{l}."
        dense(p + "w_mix", cfg.d_model, cfg.d_model)
        params[p + "b_mix"] = np.zeros(cfg.d_model)
        dense(p + "w_t", cfg.t_dim, cfg.d_model)
        dense(p + "w_q", cfg.d_model, cfg.d_head)
        dense(p + "w_k", cfg.d_text, cfg.d_head)
        dense(p + "w_v", cfg.d_text, cfg.d_head)
        dense(p + "w_o", cfg.d_head, cfg.d_model)
    dense("w_out", cfg.d_model, cfg.C, gain=0.1)
    params["b_out"] = np.zeros(cfg.C)
    params["map.w"] = np.eye(cfg.d_text)
    params["map.b"] = np.zeros(cfg.d_text)
    return params


def timestep_embedding(t, dim: int) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((len(t), 1))], axis=1)
    return emb


def _batch_plan(conds: Sequence[Conditioning], shapes, mode: str, group_size: int):
    regions, cell_off, tok_off = [], 0, 0
    for cond, (H, W) in zip(conds, shapes):
        regions += layout_regions(cond.layout, H, W, cond.counts, mode, cell_off, tok_off)
        cell_off += H * W
        tok_off += len(cond.tokens)
    order = sorted(range(len(regions)), key=lambda i: (len(regions[i].cells), i))
    return build_plan(regions, cell_off, group_size, order)


def denoise_graph(params: dict[str, ad.Var], z_t: Sequence[np.ndarray], t: Sequence[int],
                  conds: Sequence[Conditioning], cfg: DenoiserConfig, mode: str = "overwrite") -> ad.Var:
    """Build the prediction graph for a batch; returns flat [Σ H·W, C] predictions."""
    shapes = []
    for z in z_t:
        if z.ndim != 3 or z.shape[2] != cfg.C:
            raise DimensionError(f"latent of shape {z.shape} does not match C={cfg.C}")
        shapes.append(z.shape[:2])
    plan = _batch_plan(conds, shapes, mode, cfg.group_size)
    x = ad.const(np.concatenate([z.reshape(-1, cfg.C) for z in z_t]))
    cell_sample = np.concatenate([np.full(H * W, b) for b, (H, W) in enumerate(shapes)])
    temb = ad.const(timestep_embedding(t, cfg.t_dim))
    raw = ad.const(np.concatenate([c.tokens for c in conds]))
    if raw.shape[1] != cfg.d_text:
        raise DimensionError(f"token width {raw.shape[1]} != d_text {cfg.d_text}")
    gmask = ad.const(np.concatenate([c.glyph for c in conds]).astype(np.float64)[:, None])
    mapped = raw @ params["map.w"] + params["map.b"]
    tokens = raw + (mapped - raw) * gmask
    act = ad.NONLINEARITIES[cfg.nonlinearity]
    h = x @ params["w_in"] + params["b_in"]
    for l in range(cfg.blocks):
        p = f"blk{l}."
        a = region_cross_attention(h, tokens, plan, params[p + "w_q"], params[p + "w_k"],
                                   params[p + "w_v"], params[p + "w_o"], cfg.n_heads)
        tproj = ad.gather(temb @ params[p + "w_t"], cell_sample)
        u = h @ params[p + "w_mix"] + params[p + "b_mix"] + tproj + a
        h = h + act(u)
    return h @ params["w_out"] + params["b_out"]


def as_vars(params: dict[str, np.ndarray]) -> dict[str, ad.Var]:
    return {k: ad.param(k, v) for k, v in params.items()}


def denoise(z_t, t: int, layout: Layout, region_tokens, params: dict[str, np.ndarray],
            cfg: DenoiserConfig, mode: str = "overwrite") -> np.ndarray:
    z_t = np.asarray(z_t, dtype=np.float64)
    cond = region_tokens if isinstance(region_tokens, Conditioning) else Conditioning.build(layout, region_tokens)
    out = denoise_graph(as_vars(params), [z_t], [t], [cond], cfg, mode)
    return out.value.reshape(z_t.shape)


# ------------------------------------------------------------------ loss

def loss_weights(text_mask_, beta_glyph: float) -> np.ndarray:
    m = np.asarray(text_mask_, dtype=np.float64)
    if not np.all((m == 0) | (m == 1)):
        raise ValidationError("text mask must be binary")
    return (1.0 - m) + beta_glyph * m


def hybrid_loss(eps, eps_hat, text_mask_, beta_glyph: float) -> float:
    """Mean of squared error, text cells weighted by ``beta_glyph``.

    ``text_mask_`` has the spatial shape and broadcasts over channels.
    """
    eps = np.asarray(eps, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if eps.shape != eps_hat.shape:
        raise DimensionError(f"shapes differ: {eps.shape} vs {eps_hat.shape}")
    w = loss_weights(text_mask_, beta_glyph)
    if w.ndim == eps.ndim - 1:
        w = w[..., None]
    return float(np.mean(w * (eps - eps_hat) ** 2))


# ------------------------------------------------------------------ training

@dataclass(frozen=True)
class TrainExample:
    latent: np.ndarray
    layout: Layout
    region_tokens: tuple[RegionTokens, ...]


@dataclass(frozen=True)
class StepRecord:
    step: int
    loss: float
    text_loss: float
    nontext_loss: float
    dropped: int


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    trace: list[StepRecord]
    opt: AdamState

    @property
    def step(self) -> int:
        return self.opt.step


def steps_per_epoch(n: int, batch_size: int) -> int:
    return -(-n // batch_size)


def _batch_indices(n: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    per = steps_per_epoch(n, batch_size)
    epoch, k = divmod(step, per)
    perm = Rng(seed).fork("epoch", epoch).permutation(n)
    return perm[k * batch_size:(k + 1) * batch_size]


def _clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


def adamw_update(params, grads, state: AdamState, cfg: TrainConfig, lr: float | None = None) -> None:
    lr = cfg.lr if lr is None else lr
    b1, b2 = cfg.adam_betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for k in sorted(params):
        g = grads[k]
        m = state.m.get(k, np.zeros_like(g)) * b1 + (1.0 - b1) * g
        v = state.v.get(k, np.zeros_like(g)) * b2 + (1.0 - b2) * g * g
        state.m[k], state.v[k] = m, v
        update = (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
        params[k] = params[k] - lr * (update + cfg.weight_decay * params[k])


def train_step(params, batch: Sequence[TrainExample], cfg: TrainConfig, dcfg: DenoiserConfig,
               schedule: NoiseSchedule, rng: Rng, enc_cfg: EncoderConfig | None = None):
    """One optimisation step; returns (grads, StepRecord without step index)."""
    z_t, ts, eps, conds, weights, tmasks = [], [], [], [], [], []
    dropped = 0
    for b, ex in enumerate(batch):
        r = rng.fork("item", b)
        t = r.integers(1, schedule.T + 1)
        zt, e = forward_noise(ex.latent, t, schedule, r.fork("noise"))
        drop = [bool(u < cfg.dropout) for u in r.fork("dropout").uniform((len(ex.layout.layers),))]
        dropped += sum(drop)
        conds.append(Conditioning.build(ex.layout, ex.region_tokens, drop, enc_cfg))
        H, W = ex.latent.shape[:2]
        tm = text_mask(ex.layout, H, W).reshape(-1, 1)
        tmasks.append(tm)
        weights.append(loss_weights(tm, cfg.beta_glyph))
        z_t.append(zt)
        ts.append(t)
        eps.append(e.reshape(-1, dcfg.C))
    pv = as_vars(params)
    pred = denoise_graph(pv, z_t, ts, conds, dcfg)
    target = np.concatenate(eps)
    diff = pred - ad.const(target)
    loss = ad.mean(ad.const(np.concatenate(weights)) * diff * diff)
    grads = ad.backward(loss, pv)
    sq = (pred.value - target) ** 2
    tm = np.concatenate(tmasks)
    n_text = float(tm.sum()) * dcfg.C
    n_other = float((1 - tm).sum()) * dcfg.C
    text_loss = float(np.sum(sq * tm) / n_text) if n_text else 0.0
    other_loss = float(np.sum(sq * (1 - tm)) / n_other) if n_other else 0.0
    return grads, float(loss.value), text_loss, other_loss, dropped


def train(dataset: Sequence[TrainExample], cfg: TrainConfig, dcfg: DenoiserConfig,
          enc_cfg: EncoderConfig | None = None, resume: TrainResult | None = None,
          max_steps: int | None = None, on_step: Callable[[StepRecord], None] | None = None) -> TrainResult:
    """AdamW training with global-norm clipping and per-region prompt dropout.

    Every step draws its randomness from ``fork("step", k)`` of the seed, so a
    resumed run replays exactly the steps an uninterrupted run would take.
    """
    if not dataset:
        raise EmptyInputError("training dataset is empty")
    schedule = NoiseSchedule.linear(cfg.T)
    if resume is None:
        params = init_params(dcfg, Rng(cfg.seed).fork("init"))
        opt, trace = AdamState(), []
    else:
        params = {k: v.copy() for k, v in resume.params.items()}
        opt = AdamState(resume.opt.step, dict(resume.opt.m), dict(resume.opt.v))
        trace = list(resume.trace)
    planned = cfg.epochs * steps_per_epoch(len(dataset), cfg.batch_size)
    total = planned if max_steps is None else min(planned, max_steps)
    base = Rng(cfg.seed)
    for step in range(opt.step, total):
        idx = _batch_indices(len(dataset), cfg.batch_size, cfg.seed, step)
        batch = [dataset[i] for i in idx]
        grads, loss, tl, nl, dropped = train_step(params, batch, cfg, dcfg, schedule,
                                                  base.fork("step", step), enc_cfg)
        if not math.isfinite(loss):
            raise NumericError(f"non-finite loss at step {step}")
        _clip_by_global_norm(grads, cfg.grad_clip)
        adamw_update(params, grads, opt, cfg, cfg.lr_at(step, planned))
        rec = StepRecord(step, loss, tl, nl, dropped)
        trace.append(rec)
        if on_step is not None:
            on_step(rec)
    return TrainResult(params, trace, opt)


def trace_csv(trace: Sequence[StepRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "loss", "text_loss", "nontext_loss"])
    for r in trace:
        w.writerow([r.step, repr(r.loss), repr(r.text_loss), repr(r.nontext_loss)])
    return buf.getvalue()


# ------------------------------------------------------------------ sampling

def guide(eps_uncond: np.ndarray, eps_cond: np.ndarray, scale) -> np.ndarray:
    """Classifier-free guidance ``x_u + s ⊙ (x_c - x_u)``, evaluated as ``(1-s) x_u + s x_c``.

    The convex form makes s=0 and s=1 return the inputs exactly; ``scale``
    may be a scalar or a spatial map broadcasting over channels.
    """
    s = np.asarray(scale, dtype=np.float64)
    if s.ndim == 2:
        s = s[..., None]
    return (1.0 - s) * eps_uncond + s * eps_cond


@dataclass(frozen=True)
class StepTrace:
    t: int
    scale: np.ndarray | float
    eps_uncond: np.ndarray
    eps_cond: np.ndarray
    eps_guided: np.ndarray
    lcfg: bool


def _check_params(params):
    for k, v in params.items():
        if not np.all(np.isfinite(v)):
            raise NumericError(f"parameter {k!r} holds non-finite values")


def sample(layout: Layout, region_tokens, params: dict[str, np.ndarray], schedule: NoiseSchedule,
           cfg: SampleConfig, dcfg: DenoiserConfig, record: list | None = None,
           layout_conditional: bool = True, enc_cfg: EncoderConfig | None = None) -> np.ndarray:
    """Deterministic DDIM (η=0) sampling with layout-conditional CFG.

    For t > α·T the uniform ``global_scale`` applies; for t ≤ α·T the dense
    guidance map from ``cfg.guidance`` replaces it.  Without per-layer
    guidance (or with ``layout_conditional=False``) every step uses the
    classic global scale.
    """
    _check_params(params)
    H, W = layout.latent_grid()
    cond = Conditioning.build(layout, region_tokens, enc_cfg=enc_cfg)
    uncond = Conditioning.null(layout, region_tokens, enc_cfg)
    spec = cfg.guidance
    global_scale = spec.global_scale if spec is not None else cfg.global_scale
    gmap = None
    if spec is not None and layout_conditional:
        gmap = compose_guidance_map(layout, spec, H, W, cfg.mode)
    x = Rng(cfg.seed).fork("sample-noise").normal((H, W, dcfg.C))
    pv = as_vars(params)
    ts = schedule.sampling_timesteps(cfg.steps)
    for i, t in enumerate(ts):
        out = denoise_graph(pv, [x, x], [t, t], [uncond, cond], dcfg, cfg.mode).value
        eps_u = out[: H * W].reshape(H, W, dcfg.C)
        eps_c = out[H * W:].reshape(H, W, dcfg.C)
        in_window = gmap is not None and t <= spec.alpha * schedule.T
        scale = gmap if in_window else global_scale
        eps = guide(eps_u, eps_c, scale)
        if record is not None:
            record.append(StepTrace(t, scale, eps_u, eps_c, eps, in_window))
        ab = schedule.alpha_bar(t)
        ab_prev = schedule.alpha_bar(ts[i + 1] if i + 1 < len(ts) else 0)
        x0 = (x - math.sqrt(1.0 - ab) * eps) / math.sqrt(ab)
        if cfg.clip_latent is not None:
            x0 = np.clip(x0, -cfg.clip_latent, cfg.clip_latent)
            eps = (x - math.sqrt(ab) * x0) / math.sqrt(1.0 - ab)  # keep the update consistent with x0
        x = math.sqrt(ab_prev) * x0 + math.sqrt(1.0 - ab_prev) * eps
        if not np.all(np.isfinite(x)):
            raise NumericError(f"sampler diverged at t={t}")
    return x


# ------------------------------------------------------------------ toy autoencoder

def decode(latent, scale: int = 32) -> np.ndarray:
    """Logistic squash of the first three channels, nearest upsampling, opaque alpha."""
    latent = np.asarray(latent, dtype=np.float64)
    if latent.ndim != 3 or latent.shape[2] < 3:
        raise DimensionError(f"latent must be HxWxC with C>=3, got {latent.shape}")
    rgb = 1.0 / (1.0 + np.exp(-latent[..., :3]))
    rgb = np.repeat(np.repeat(rgb, scale, axis=0), scale, axis=1)
    return np.concatenate([rgb, np.ones(rgb.shape[:2] + (1,))], axis=2)


def encode(image, scale: int = 32, channels: int = 3, eps: float = 1e-3) -> np.ndarray:
    """Inverse of :func:`decode` up to block averaging."""
    img = np.asarray(image)
    if img.dtype == np.uint8:
        img = img.astype(np.float64) / 255.0
    H, W = img.shape[0] // scale, img.shape[1] // scale
    rgb = img[: H * scale, : W * scale, :3].reshape(H, scale, W, scale, 3).mean(axis=(1, 3))
    p = np.clip(rgb, eps, 1.0 - eps)
    lat = np.log(p / (1.0 - p))
    if channels > 3:
        lat = np.concatenate([lat, np.zeros((H, W, channels - 3))], axis=2)
    return lat


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


# ------------------------------------------------------------------ checkpoints

def _pack(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _unpack(d: dict) -> np.ndarray:
    return np.frombuffer(base64.b64decode(d["data"]), dtype="<f8").reshape(d["shape"]).copy()


def dumps_checkpoint(result: TrainResult, dcfg: DenoiserConfig, tcfg: TrainConfig,
                     enc_cfg: EncoderConfig) -> str:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "denoiser": asdict(dcfg),
        "train": asdict(tcfg),
        "encoder": asdict(enc_cfg),
        "seed": tcfg.seed,
        "step": result.opt.step,
        "params": {k: _pack(v) for k, v in sorted(result.params.items())},
        "adam_m": {k: _pack(v) for k, v in sorted(result.opt.m.items())},
        "adam_v": {k: _pack(v) for k, v in sorted(result.opt.v.items())},
        "trace": [asdict(r) for r in result.trace],
    }
    return json.dumps(doc, sort_keys=True) + "\n"


def loads_checkpoint(text: str):
    """Returns (TrainResult, DenoiserConfig, TrainConfig, EncoderConfig)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"checkpoint is not valid JSON: {exc}") from None
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ValidationError("unrecognised checkpoint format or version")
    dcfg = DenoiserConfig(**doc["denoiser"])
    train_doc = dict(doc["train"])
    train_doc["adam_betas"] = tuple(train_doc["adam_betas"])
    tcfg = TrainConfig(**train_doc)
    enc_cfg = EncoderConfig(**doc["encoder"])
    opt = AdamState(doc["step"], {k: _unpack(v) for k, v in doc["adam_m"].items()},
                    {k: _unpack(v) for k, v in doc["adam_v"].items()})
    trace = [StepRecord(**r) for r in doc["trace"]]
    params = {k: _unpack(v) for k, v in doc["params"].items()}
    return TrainResult(params, trace, opt), dcfg, tcfg, enc_cfg
