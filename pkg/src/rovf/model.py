"""The recurrent video-embedding head and the triplet margin loss.

A learned latent array (the recurrent hidden state) is updated once per
frame: cross-attention injects the frame's tokens into the latents, then a
stack of pre-norm self-attention + feedforward layers mixes them; the video
embedding is an output projection of the mean latent row. Only the embedding
emitted after the last frame is used downstream.

Forward and backward passes are written by hand on NumPy arrays so parameter
gradients are exact and checkable against finite differences. Dropout sits
on the incoming frame tokens, on attention probabilities, and after each
attention/feedforward block; all of it is inert in eval mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .metric import euclidean

_LN_EPS = 1e-5
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class RoVFConfig:
    d_model: int = 768
    n_latents: int = 32
    n_layers: int = 2
    n_heads: int = 8
    dropout: float = 0.1
    d_ff: int = 0  # 0 means 4 * d_model
    out_dim: int = 768

    def __post_init__(self) -> None:
        if min(self.d_model, self.n_latents, self.n_layers, self.n_heads, self.out_dim) < 1:
            raise ModelError("all dimensions and counts must be >= 1")
        if self.d_model % self.n_heads:
            raise ModelError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if not (0.0 <= self.dropout < 1.0):
            raise ModelError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.d_ff < 0:
            raise ModelError("d_ff must be >= 0")

    @property
    def ff_dim(self) -> int:
        return self.d_ff if self.d_ff else 4 * self.d_model

    def to_json_dict(self) -> dict:
        return {
            "d_model": self.d_model,
            "n_latents": self.n_latents,
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "dropout": self.dropout,
            "d_ff": self.d_ff,
            "out_dim": self.out_dim,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "RoVFConfig":
        return cls(
            d_model=int(data["d_model"]),
            n_latents=int(data["n_latents"]),
            n_layers=int(data["n_layers"]),
            n_heads=int(data["n_heads"]),
            dropout=float(data["dropout"]),
            d_ff=int(data.get("d_ff", 0)),
            out_dim=int(data["out_dim"]),
        )


def _ln_names(prefix: str, d: int) -> list[tuple[str, tuple, str]]:
    return [(f"{prefix}.g", (d,), "ones"), (f"{prefix}.b", (d,), "zeros")]


def _attn_names(prefix: str, d: int) -> list[tuple[str, tuple, str]]:
    names = []
    for proj in ("wq", "wk", "wv", "wo"):
        names.append((f"{prefix}.{proj}", (d, d), "normal"))
    for bias in ("bq", "bk", "bv", "bo"):
        names.append((f"{prefix}.{bias}", (d,), "zeros"))
    return names


def param_spec(cfg: RoVFConfig) -> list[tuple[str, tuple, str]]:
    """Ordered (name, shape, init kind) for every parameter block."""
    d, f = cfg.d_model, cfg.ff_dim
    spec: list[tuple[str, tuple, str]] = [("latent_init", (cfg.n_latents, d), "normal")]
    spec += _ln_names("cross.ln_q", d)
    spec += _ln_names("cross.ln_kv", d)
    spec += _attn_names("cross", d)
    for i in range(cfg.n_layers):
        spec += _ln_names(f"layers.{i}.ln_sa", d)
        spec += _attn_names(f"layers.{i}.sa", d)
        spec += _ln_names(f"layers.{i}.ln_ff", d)
        spec += [
            (f"layers.{i}.ff.w1", (d, f), "normal"),
            (f"layers.{i}.ff.b1", (f,), "zeros"),
            (f"layers.{i}.ff.w2", (f, d), "normal"),
            (f"layers.{i}.ff.b2", (d,), "zeros"),
        ]
    spec += [("out.w", (d, cfg.out_dim), "normal"), ("out.b", (cfg.out_dim,), "zeros")]
    return spec


@dataclass
class RoVFModel:
    cfg: RoVFConfig
    params: dict[str, np.ndarray] = field(repr=False)

    @property
    def dtype(self):
        return self.params["latent_init"].dtype

    def initial_state(self) -> np.ndarray:
        """Fresh copy of the learned initial latent array."""
        return self.params["latent_init"].copy()

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(arr) for name, arr in self.params.items()}


def init_model(cfg: RoVFConfig, seed: int, dtype=np.float32) -> RoVFModel:
    """Weights ~ N(0, 0.02^2), norm gains 1, biases 0; deterministic in seed."""
    from .streams import derive

    rng = derive(seed, "rovf-init")
    params: dict[str, np.ndarray] = {}
    for name, shape, kind in param_spec(cfg):
        if kind == "normal":
            params[name] = rng.normal(0.0, 0.02, size=shape).astype(dtype)
        elif kind == "ones":
            params[name] = np.ones(shape, dtype=dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    return RoVFModel(cfg=cfg, params=params)


# ---------------------------------------------------------------------------
# primitives (forward returns a cache consumed by the matching backward)
# ---------------------------------------------------------------------------

def _ln_fwd(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def _ln_bwd(dy, g, cache, grads, prefix):
    xhat, inv = cache
    _acc(grads, f"{prefix}.g", (dy * xhat).sum(axis=0))
    _acc(grads, f"{prefix}.b", dy.sum(axis=0))
    dxhat = dy * g
    mean1 = dxhat.mean(axis=-1, keepdims=True)
    mean2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    return inv * (dxhat - mean1 - xhat * mean2)


def _gelu_fwd(x):
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    return x * cdf, (x, cdf)


def _gelu_bwd(dy, cache):
    x, cdf = cache
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return dy * (cdf + x * pdf)


def _dropout_fwd(x, p, train, rng):
    if not train or p == 0.0:
        return x, None
    if rng is None:
        raise ModelError("training with dropout > 0 requires an rng")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1.0 - p)
    return x * keep, keep


def _dropout_bwd(d, mask):
    return d if mask is None else d * mask


def _acc(grads, name, value):
    grads[name] += value


def _split_heads(x, n_heads):
    n, d = x.shape
    return x.reshape(n, n_heads, d // n_heads).transpose(1, 0, 2)


def _merge_heads(x):
    h, n, dh = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * dh)


def _mha_fwd(params, prefix, x_q, x_kv, n_heads, p_attn, train, rng):
    q = x_q @ params[f"{prefix}.wq"] + params[f"{prefix}.bq"]
    k = x_kv @ params[f"{prefix}.wk"] + params[f"{prefix}.bk"]
    v = x_kv @ params[f"{prefix}.wv"] + params[f"{prefix}.bv"]
    qh, kh, vh = (_split_heads(m, n_heads) for m in (q, k, v))
    scale = 1.0 / math.sqrt(qh.shape[2])
    scores = np.matmul(qh, kh.swapaxes(1, 2)) * scale
    scores -= scores.max(axis=-1, keepdims=True)
    expd = np.exp(scores)
    probs = expd / expd.sum(axis=-1, keepdims=True)
    probs_d, attn_mask = _dropout_fwd(probs, p_attn, train, rng)
    ctx = np.matmul(probs_d, vh)
    merged = _merge_heads(ctx)
    out = merged @ params[f"{prefix}.wo"] + params[f"{prefix}.bo"]
    cache = (x_q, x_kv, qh, kh, vh, probs, attn_mask, merged, scale)
    return out, cache


def _mha_bwd(params, prefix, dout, cache, grads, n_heads):
    x_q, x_kv, qh, kh, vh, probs, attn_mask, merged, scale = cache
    _acc(grads, f"{prefix}.wo", merged.T @ dout)
    _acc(grads, f"{prefix}.bo", dout.sum(axis=0))
    dmerged = dout @ params[f"{prefix}.wo"].T
    dctx = _split_heads(dmerged, n_heads)
    probs_d = probs if attn_mask is None else probs * attn_mask
    dprobs_d = np.matmul(dctx, vh.swapaxes(1, 2))
    dvh = np.matmul(probs_d.swapaxes(1, 2), dctx)
    dprobs = _dropout_bwd(dprobs_d, attn_mask)
    dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
    dscores *= scale
    dqh = np.matmul(dscores, kh)
    dkh = np.matmul(dscores.swapaxes(1, 2), qh)
    dq, dk, dv = (_merge_heads(m) for m in (dqh, dkh, dvh))
    _acc(grads, f"{prefix}.wq", x_q.T @ dq)
    _acc(grads, f"{prefix}.bq", dq.sum(axis=0))
    _acc(grads, f"{prefix}.wk", x_kv.T @ dk)
    _acc(grads, f"{prefix}.bk", dk.sum(axis=0))
    _acc(grads, f"{prefix}.wv", x_kv.T @ dv)
    _acc(grads, f"{prefix}.bv", dv.sum(axis=0))
    dx_q = dq @ params[f"{prefix}.wq"].T
    dx_kv = dk @ params[f"{prefix}.wk"].T + dv @ params[f"{prefix}.wv"].T
    return dx_q, dx_kv


# ---------------------------------------------------------------------------
# the recurrent step and the fold over frames
# ---------------------------------------------------------------------------

def _step_fwd(params, cfg, latent, tokens, train, rng):
    p = cfg.dropout
    tokens_d, tok_mask = _dropout_fwd(tokens, p, train, rng)
    qn, qn_cache = _ln_fwd(latent, params["cross.ln_q.g"], params["cross.ln_q.b"])
    kvn, kvn_cache = _ln_fwd(tokens_d, params["cross.ln_kv.g"], params["cross.ln_kv.b"])
    attn, attn_cache = _mha_fwd(params, "cross", qn, kvn, cfg.n_heads, p, train, rng)
    attn_d, attn_out_mask = _dropout_fwd(attn, p, train, rng)
    latent = latent + attn_d

    layer_caches = []
    for i in range(cfg.n_layers):
        base = f"layers.{i}"
        an, an_cache = _ln_fwd(latent, params[f"{base}.ln_sa.g"], params[f"{base}.ln_sa.b"])
        sa, sa_cache = _mha_fwd(params, f"{base}.sa", an, an, cfg.n_heads, p, train, rng)
        sa_d, sa_mask = _dropout_fwd(sa, p, train, rng)
        latent = latent + sa_d

        fn, fn_cache = _ln_fwd(latent, params[f"{base}.ln_ff.g"], params[f"{base}.ln_ff.b"])
        pre = fn @ params[f"{base}.ff.w1"] + params[f"{base}.ff.b1"]
        act, gelu_cache = _gelu_fwd(pre)
        act_d, act_mask = _dropout_fwd(act, p, train, rng)
        ff = act_d @ params[f"{base}.ff.w2"] + params[f"{base}.ff.b2"]
        ff_d, ff_mask = _dropout_fwd(ff, p, train, rng)
        latent = latent + ff_d
        layer_caches.append((an_cache, sa_cache, sa_mask, fn_cache, fn, gelu_cache, act_d, act_mask, ff_mask))

    mean_latent = latent.mean(axis=0)
    emb = mean_latent @ params["out.w"] + params["out.b"]
    cache = (tok_mask, qn_cache, kvn_cache, attn_cache, attn_out_mask, layer_caches, mean_latent)
    return latent, emb, cache


def _step_bwd(params, cfg, cache, dlatent, demb, grads):
    tok_mask, qn_cache, kvn_cache, attn_cache, attn_out_mask, layer_caches, mean_latent = cache
    if demb is not None:
        _acc(grads, "out.w", np.outer(mean_latent, demb))
        _acc(grads, "out.b", demb)
        dmean = params["out.w"] @ demb
        dlatent = dlatent + dmean[None, :] / cfg.n_latents

    for i in reversed(range(cfg.n_layers)):
        base = f"layers.{i}"
        an_cache, sa_cache, sa_mask, fn_cache, fn, gelu_cache, act_d, act_mask, ff_mask = layer_caches[i]
        dff = _dropout_bwd(dlatent, ff_mask)
        _acc(grads, f"{base}.ff.w2", act_d.T @ dff)
        _acc(grads, f"{base}.ff.b2", dff.sum(axis=0))
        dact = _dropout_bwd(dff @ params[f"{base}.ff.w2"].T, act_mask)
        dpre = _gelu_bwd(dact, gelu_cache)
        _acc(grads, f"{base}.ff.w1", fn.T @ dpre)
        _acc(grads, f"{base}.ff.b1", dpre.sum(axis=0))
        dfn = dpre @ params[f"{base}.ff.w1"].T
        dlatent = dlatent + _ln_bwd(dfn, params[f"{base}.ln_ff.g"], fn_cache, grads, f"{base}.ln_ff")

        dsa = _dropout_bwd(dlatent, sa_mask)
        dan_q, dan_kv = _mha_bwd(params, f"{base}.sa", dsa, sa_cache, grads, cfg.n_heads)
        dan = dan_q + dan_kv
        dlatent = dlatent + _ln_bwd(dan, params[f"{base}.ln_sa.g"], an_cache, grads, f"{base}.ln_sa")

    dattn = _dropout_bwd(dlatent, attn_out_mask)
    dqn, dkvn = _mha_bwd(params, "cross", dattn, attn_cache, grads, cfg.n_heads)
    dlatent_in = dlatent + _ln_bwd(dqn, params["cross.ln_q.g"], qn_cache, grads, "cross.ln_q")
    dtokens = _dropout_bwd(
        _ln_bwd(dkvn, params["cross.ln_kv.g"], kvn_cache, grads, "cross.ln_kv"), tok_mask
    )
    return dlatent_in, dtokens


def _check_tokens(cfg: RoVFConfig, tokens: np.ndarray) -> None:
    if tokens.ndim != 2 or tokens.shape[0] < 1:
        raise ModelError(f"frame tokens must be (n_tokens, d_model), got {tokens.shape}")
    if tokens.shape[1] != cfg.d_model:
        raise ModelError(f"token width {tokens.shape[1]} != d_model {cfg.d_model}")


def rovf_step(model: RoVFModel, latent: np.ndarray, tokens: np.ndarray, train: bool = False, rng=None):
    """One recurrent update: returns (next hidden state, video embedding)."""
    _check_tokens(model.cfg, tokens)
    if latent.shape != (model.cfg.n_latents, model.cfg.d_model):
        raise ModelError(f"hidden state shape {latent.shape} inconsistent with config")
    tokens = np.asarray(tokens, dtype=model.dtype)
    latent_out, emb, _ = _step_fwd(model.params, model.cfg, latent, tokens, train, rng)
    return latent_out, emb


def _as_frame_list(model: RoVFModel, clip) -> list[np.ndarray]:
    if isinstance(clip, np.ndarray) and clip.ndim == 3:
        frames = [clip[i] for i in range(clip.shape[0])]
    else:
        frames = list(clip)
    if not frames:
        raise ModelError("empty clip")
    out = []
    for tokens in frames:
        tokens = np.asarray(tokens, dtype=model.dtype)
        _check_tokens(model.cfg, tokens)
        out.append(tokens)
    return out


def rovf_forward(model: RoVFModel, clip, train: bool = False, rng=None) -> np.ndarray:
    """Fold the recurrent step over a clip's frames; last embedding wins."""
    emb, _ = rovf_forward_with_cache(model, clip, train=train, rng=rng)
    return emb


def rovf_forward_with_cache(model: RoVFModel, clip, train: bool = False, rng=None):
    frames = _as_frame_list(model, clip)
    latent = model.initial_state()
    caches = []
    emb = None
    for tokens in frames:
        latent, emb, cache = _step_fwd(model.params, model.cfg, latent, tokens, train, rng)
        caches.append(cache)
    return emb, caches


def rovf_backward(model: RoVFModel, caches, demb: np.ndarray, grads=None):
    """Backprop through the unrolled recurrence.

    ``demb`` is d(loss)/d(final embedding). Returns (grads, dtokens) where
    dtokens has one (n_tokens, d_model) array per frame, for encoders that
    train through the head. Gradients accumulate into ``grads`` when given.
    """
    if grads is None:
        grads = model.zero_grads()
    dlatent = np.zeros((model.cfg.n_latents, model.cfg.d_model), dtype=model.dtype)
    demb = np.asarray(demb, dtype=model.dtype)
    dtokens: list[np.ndarray] = []
    for i, cache in enumerate(reversed(caches)):
        step_demb = demb if i == 0 else None
        dlatent, dtok = _step_bwd(model.params, model.cfg, cache, dlatent, step_demb, grads)
        dtokens.append(dtok)
    _acc(grads, "latent_init", dlatent)
    dtokens.reverse()
    return grads, dtokens


# ---------------------------------------------------------------------------
# triplet margin loss
# ---------------------------------------------------------------------------

def triplet_loss(a: np.ndarray, p: np.ndarray, n: np.ndarray, margin: float = 1.0) -> float:
    """max(d(a, p) - d(a, n) + margin, 0) with Euclidean distances."""
    loss, _, _ = triplet_loss_with_grad(a, p, n, margin)
    return loss


def triplet_loss_with_grad(a: np.ndarray, p: np.ndarray, n: np.ndarray, margin: float = 1.0):
    a64, p64, n64 = (np.asarray(v, dtype=np.float64) for v in (a, p, n))
    if not (a64.shape == p64.shape == n64.shape) or a64.ndim != 1:
        raise ModelError(f"embedding shapes differ: {a64.shape}, {p64.shape}, {n64.shape}")
    if not (np.isfinite(a64).all() and np.isfinite(p64).all() and np.isfinite(n64).all()):
        raise ModelError("non-finite embedding passed to triplet loss")
    d_ap = euclidean(a64, p64)
    d_an = euclidean(a64, n64)
    loss = d_ap - d_an + margin
    zeros = np.zeros_like(a64)
    if loss <= 0.0:
        return 0.0, (zeros, zeros.copy(), zeros.copy()), (d_ap, d_an)
    # subgradient 0 at coincident points (norm kink)
    g_ap = (a64 - p64) / d_ap if d_ap > 0 else zeros
    g_an = (a64 - n64) / d_an if d_an > 0 else zeros
    return float(loss), (g_ap - g_an, -g_ap, g_an), (d_ap, d_an)
