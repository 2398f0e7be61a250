"""Transformer encoder for per-frame regression, in plain numpy.

The network standardizes each input dimension with buffers fitted on
the training set (identity until a trainer sets them), embeds the
773-dim frame vectors into the model width, adds sinusoidal position
codes, applies post-norm encoder layers (masked multi-head
self-attention and a GELU feed-forward, each with residual and layer
norm), and regresses two outputs per position through a small GELU
head.

Masking contract: masked positions contribute exactly zero attention
weight (their scores are set to -inf before the softmax) and zero loss,
so outputs at valid positions are bitwise independent of whatever finite
values sit at masked positions.  Dropout masks depend only on the seed
and array shapes, never on values.

Both passes are written by hand; ``check_gradients`` compares every
analytic derivative against central finite differences.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from ..errors import ConfigError, DimMismatch, NonFiniteActivation

LN_EPS = 1e-5
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# frozen input-standardization buffers; stored with the parameters but
# never touched by the optimizer or the gradient checker
BUFFER_KEYS = ("input_mu", "input_sd")


@dataclass
class ModelConfig:
    """Architecture hyperparameters."""

    input_dim: int = 773
    model_dim: int = 512
    num_layers: int = 6
    num_heads: int = 8
    ffn_dim: int = 2048
    head_hidden: int = 256
    output_dim: int = 2
    dropout: float = 0.1
    max_len: int = 100
    dtype: str = "float32"

    def validate(self) -> None:
        dims = (
            self.input_dim,
            self.model_dim,
            self.num_layers,
            self.num_heads,
            self.ffn_dim,
            self.head_hidden,
            self.output_dim,
            self.max_len,
        )
        if any(d <= 0 for d in dims):
            raise ConfigError(f"all model dimensions must be positive: {self}")
        if self.model_dim % self.num_heads != 0:
            raise ConfigError(
                f"model_dim {self.model_dim} not divisible by {self.num_heads} heads"
            )
        if self.model_dim % 2 != 0:
            raise ConfigError("model_dim must be even for sin/cos position codes")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype}")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads


def positional_encoding(max_len: int, dim: int) -> np.ndarray:
    """Interleaved sin/cos position codes, shape (max_len, dim)."""
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    i = np.arange(dim // 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, 2.0 * i / dim)
    pe = np.zeros((max_len, dim), dtype=np.float64)
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return pe


def _glorot(rng, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


def init_params(cfg: ModelConfig, seed: int) -> dict:
    """Glorot-uniform weights, zero biases, identity layer norms.

    Parameters are created (and random draws consumed) in a fixed order,
    so one seed always yields the same initialization.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    dt = cfg.np_dtype
    d, f, hh = cfg.model_dim, cfg.ffn_dim, cfg.head_hidden
    params = {
        "input_mu": np.zeros(cfg.input_dim, dtype=dt),
        "input_sd": np.ones(cfg.input_dim, dtype=dt),
        "embed_w": _glorot(rng, cfg.input_dim, d, dt),
        "embed_b": np.zeros(d, dtype=dt),
    }
    for i in range(cfg.num_layers):
        p = f"layers.{i}."
        for name in ("wq", "wk", "wv", "wo"):
            params[p + name] = _glorot(rng, d, d, dt)
            params[p + name.replace("w", "b")] = np.zeros(d, dtype=dt)
        params[p + "ln1_g"] = np.ones(d, dtype=dt)
        params[p + "ln1_b"] = np.zeros(d, dtype=dt)
        params[p + "ffn_w1"] = _glorot(rng, d, f, dt)
        params[p + "ffn_b1"] = np.zeros(f, dtype=dt)
        params[p + "ffn_w2"] = _glorot(rng, f, d, dt)
        params[p + "ffn_b2"] = np.zeros(d, dtype=dt)
        params[p + "ln2_g"] = np.ones(d, dtype=dt)
        params[p + "ln2_b"] = np.zeros(d, dtype=dt)
    params["head_w1"] = _glorot(rng, d, hh, dt)
    params["head_b1"] = np.zeros(hh, dtype=dt)
    params["head_w2"] = _glorot(rng, hh, cfg.output_dim, dt)
    params["head_b2"] = np.zeros(cfg.output_dim, dtype=dt)
    return params


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x / math.sqrt(2.0))) + x * INV_SQRT_2PI * np.exp(-0.5 * x * x)


def _dropout_mask(rng, shape, p: float, dtype) -> np.ndarray:
    keep = rng.random(shape) >= p
    return keep.astype(dtype) / dtype.type(1.0 - p)


def _ln_forward(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(LN_EPS))
    xhat = xc * inv
    return xhat * g + b, xhat, inv


def _ln_backward(dy, g, xhat, inv):
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = np.mean(dxhat * xhat, axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    dg = np.sum(dy * xhat, axis=(0, 1))
    db = np.sum(dy, axis=(0, 1))
    return dx, dg, db


def _masked_softmax(scores: np.ndarray, key_valid: np.ndarray) -> np.ndarray:
    """Softmax over the last axis with invalid keys at exactly zero.

    Rows whose keys are all invalid come out all-zero rather than NaN.
    """
    neg = np.array(-np.inf, dtype=scores.dtype)
    masked = np.where(key_valid[:, None, None, :], scores, neg)
    rowmax = masked.max(axis=-1, keepdims=True)
    rowmax = np.where(np.isfinite(rowmax), rowmax, scores.dtype.type(0.0))
    e = np.exp(masked - rowmax)
    denom = e.sum(axis=-1, keepdims=True)
    return e / np.where(denom > 0, denom, scores.dtype.type(1.0))


def _split_heads(x, num_heads):
    b, t, d = x.shape
    return x.reshape(b, t, num_heads, d // num_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def forward(
    params: dict,
    cfg: ModelConfig,
    x: np.ndarray,
    mask: np.ndarray,
    train: bool = False,
    dropout_rng=None,
    want_cache: bool = False,
):
    """Run the network.

    ``x`` is (B, T, input_dim), ``mask`` a (B, T) boolean of valid
    positions.  Returns (B, T, output_dim) estimates, plus the
    activation cache when ``want_cache`` is set.
    """
    cfg.validate()
    x = np.asarray(x)
    mask = np.asarray(mask, dtype=bool)
    if x.ndim != 3 or x.shape[2] != cfg.input_dim:
        raise DimMismatch(f"input shape {x.shape}, expected (B, T, {cfg.input_dim})")
    if mask.shape != x.shape[:2]:
        raise DimMismatch(f"mask shape {mask.shape} does not match input {x.shape[:2]}")
    if x.shape[1] > cfg.max_len:
        raise DimMismatch(f"sequence length {x.shape[1]} exceeds max_len {cfg.max_len}")
    dt = cfg.np_dtype
    x = x.astype(dt, copy=False)
    x = (x - params["input_mu"]) / params["input_sd"]
    b, t, _ = x.shape
    use_dropout = train and cfg.dropout > 0.0
    if use_dropout and dropout_rng is None:
        raise ConfigError("training forward with dropout needs a generator")
    scale = dt.type(1.0 / math.sqrt(cfg.head_dim))

    cache = {"x": x, "mask": mask, "layers": [], "use_dropout": use_dropout}

    h = x.reshape(b * t, cfg.input_dim) @ params["embed_w"] + params["embed_b"]
    h = h.reshape(b, t, cfg.model_dim)
    h = h + positional_encoding(cfg.max_len, cfg.model_dim)[:t].astype(dt)
    if use_dropout:
        m = _dropout_mask(dropout_rng, h.shape, cfg.dropout, dt)
        cache["embed_drop"] = m
        h = h * m
    else:
        cache["embed_drop"] = None
    cache["h0"] = h

    for i in range(cfg.num_layers):
        p = f"layers.{i}."
        lc = {"x_in": h}
        h2d = h.reshape(b * t, cfg.model_dim)
        q = _split_heads((h2d @ params[p + "wq"] + params[p + "bq"]).reshape(b, t, -1), cfg.num_heads)
        k = _split_heads((h2d @ params[p + "wk"] + params[p + "bk"]).reshape(b, t, -1), cfg.num_heads)
        v = _split_heads((h2d @ params[p + "wv"] + params[p + "bv"]).reshape(b, t, -1), cfg.num_heads)
        scores = np.matmul(q, k.transpose(0, 1, 3, 2)) * scale
        probs = _masked_softmax(scores, mask)
        ctx = _merge_heads(np.matmul(probs, v))
        attn = (ctx.reshape(b * t, -1) @ params[p + "wo"] + params[p + "bo"]).reshape(b, t, -1)
        if use_dropout:
            m = _dropout_mask(dropout_rng, attn.shape, cfg.dropout, dt)
            lc["attn_drop"] = m
            attn = attn * m
        else:
            lc["attn_drop"] = None
        r1 = h + attn
        x_mid, xhat1, inv1 = _ln_forward(r1, params[p + "ln1_g"], params[p + "ln1_b"])
        u = x_mid.reshape(b * t, -1) @ params[p + "ffn_w1"] + params[p + "ffn_b1"]
        g = _gelu(u)
        f = (g @ params[p + "ffn_w2"] + params[p + "ffn_b2"]).reshape(b, t, -1)
        if use_dropout:
            m = _dropout_mask(dropout_rng, f.shape, cfg.dropout, dt)
            lc["ffn_drop"] = m
            f = f * m
        else:
            lc["ffn_drop"] = None
        r2 = x_mid + f
        h, xhat2, inv2 = _ln_forward(r2, params[p + "ln2_g"], params[p + "ln2_b"])
        lc.update(q=q, k=k, v=v, probs=probs, ctx=ctx, xhat1=xhat1, inv1=inv1,
                  x_mid=x_mid, u=u, g=g, xhat2=xhat2, inv2=inv2)
        cache["layers"].append(lc)

    cache["h_final"] = h
    uh = h.reshape(b * t, cfg.model_dim) @ params["head_w1"] + params["head_b1"]
    gh = _gelu(uh)
    if use_dropout:
        m = _dropout_mask(dropout_rng, gh.shape, cfg.dropout, dt)
        cache["head_drop"] = m
        ghd = gh * m
    else:
        cache["head_drop"] = None
        ghd = gh
    y = (ghd @ params["head_w2"] + params["head_b2"]).reshape(b, t, cfg.output_dim)
    cache.update(uh=uh, gh=gh, ghd=ghd)

    if not np.all(np.isfinite(y)):
        raise NonFiniteActivation("forward pass produced non-finite outputs")
    if want_cache:
        return y, cache
    return y


def masked_mse(pred: np.ndarray, target: np.ndarray, mask: np.ndarray):
    """Mean squared error over (valid position, output) pairs.

    Returns (loss, gradient w.r.t. pred, number of valid positions).
    An all-masked batch has zero loss and zero gradient.
    """
    pred = np.asarray(pred)
    target = np.asarray(target, dtype=pred.dtype)
    mask = np.asarray(mask, dtype=bool)
    if pred.shape != target.shape or mask.shape != pred.shape[:2]:
        raise DimMismatch(
            f"loss shapes disagree: pred {pred.shape}, target {target.shape}, mask {mask.shape}"
        )
    m = mask[:, :, None].astype(pred.dtype)
    diff = (pred - target) * m
    count = int(mask.sum()) * pred.shape[2]
    denom = max(count, 1)
    loss = float(np.sum(diff * diff, dtype=np.float64) / denom)
    dpred = diff * pred.dtype.type(2.0 / denom)
    return loss, dpred, count


def backward(params: dict, cfg: ModelConfig, cache: dict, dy: np.ndarray) -> dict:
    """Analytic gradients of every parameter given d(loss)/d(output)."""
    dt = cfg.np_dtype
    b, t, _ = cache["x"].shape
    scale = dt.type(1.0 / math.sqrt(cfg.head_dim))
    grads = {}

    dy2d = np.asarray(dy, dtype=dt).reshape(b * t, cfg.output_dim)
    grads["head_w2"] = cache["ghd"].T @ dy2d
    grads["head_b2"] = dy2d.sum(axis=0)
    dghd = dy2d @ params["head_w2"].T
    if cache["head_drop"] is not None:
        dgh = dghd * cache["head_drop"]
    else:
        dgh = dghd
    duh = dgh * _gelu_grad(cache["uh"])
    h2d = cache["h_final"].reshape(b * t, cfg.model_dim)
    grads["head_w1"] = h2d.T @ duh
    grads["head_b1"] = duh.sum(axis=0)
    dh = (duh @ params["head_w1"].T).reshape(b, t, cfg.model_dim)

    for i in reversed(range(cfg.num_layers)):
        p = f"layers.{i}."
        lc = cache["layers"][i]

        dr2, dg2, db2 = _ln_backward(dh, params[p + "ln2_g"], lc["xhat2"], lc["inv2"])
        grads[p + "ln2_g"] = dg2
        grads[p + "ln2_b"] = db2
        df = dr2
        dx_mid = dr2.copy()
        if lc["ffn_drop"] is not None:
            df = df * lc["ffn_drop"]
        df2d = df.reshape(b * t, cfg.model_dim)
        grads[p + "ffn_w2"] = lc["g"].T @ df2d
        grads[p + "ffn_b2"] = df2d.sum(axis=0)
        dg = df2d @ params[p + "ffn_w2"].T
        du = dg * _gelu_grad(lc["u"])
        xm2d = lc["x_mid"].reshape(b * t, cfg.model_dim)
        grads[p + "ffn_w1"] = xm2d.T @ du
        grads[p + "ffn_b1"] = du.sum(axis=0)
        dx_mid += (du @ params[p + "ffn_w1"].T).reshape(b, t, cfg.model_dim)

        dr1, dg1, db1 = _ln_backward(dx_mid, params[p + "ln1_g"], lc["xhat1"], lc["inv1"])
        grads[p + "ln1_g"] = dg1
        grads[p + "ln1_b"] = db1
        dattn = dr1
        dh = dr1.copy()
        if lc["attn_drop"] is not None:
            dattn = dattn * lc["attn_drop"]
        dattn2d = dattn.reshape(b * t, cfg.model_dim)
        ctx2d = lc["ctx"].reshape(b * t, cfg.model_dim)
        grads[p + "wo"] = ctx2d.T @ dattn2d
        grads[p + "bo"] = dattn2d.sum(axis=0)
        dctx = _split_heads((dattn2d @ params[p + "wo"].T).reshape(b, t, -1), cfg.num_heads)

        probs = lc["probs"]
        dprobs = np.matmul(dctx, lc["v"].transpose(0, 1, 3, 2))
        dv = np.matmul(probs.transpose(0, 1, 3, 2), dctx)
        dscores = probs * (dprobs - np.sum(dprobs * probs, axis=-1, keepdims=True))
        dq = np.matmul(dscores, lc["k"]) * scale
        dk = np.matmul(dscores.transpose(0, 1, 3, 2), lc["q"]) * scale

        xin2d = lc["x_in"].reshape(b * t, cfg.model_dim)
        for name, dval in (("q", dq), ("k", dk), ("v", dv)):
            d2d = _merge_heads(dval).reshape(b * t, cfg.model_dim)
            grads[p + "w" + name] = xin2d.T @ d2d
            grads[p + "b" + name] = d2d.sum(axis=0)
            dh += (d2d @ params[p + "w" + name].T).reshape(b, t, cfg.model_dim)

    if cache["embed_drop"] is not None:
        dh = dh * cache["embed_drop"]
    dh2d = dh.reshape(b * t, cfg.model_dim)
    x2d = cache["x"].reshape(b * t, cfg.input_dim)
    grads["embed_w"] = x2d.T @ dh2d
    grads["embed_b"] = dh2d.sum(axis=0)
    return grads


def value_and_grad(
    params: dict,
    cfg: ModelConfig,
    x: np.ndarray,
    mask: np.ndarray,
    target: np.ndarray,
    train: bool = False,
    dropout_seed: int | None = None,
):
    """Masked-MSE loss and all parameter gradients for one batch."""
    rng = None
    if train and cfg.dropout > 0.0:
        rng = np.random.default_rng(0 if dropout_seed is None else dropout_seed)
    y, cache = forward(params, cfg, x, mask, train=train, dropout_rng=rng, want_cache=True)
    loss, dpred, count = masked_mse(y, target, mask)
    grads = backward(params, cfg, cache, dpred)
    return loss, grads, count


@dataclass
class GradCheckReport:
    """Outcome of the finite-difference gradient validation."""

    max_rel_error: float
    worst_param: str
    entries_checked: int
    tolerance: float
    per_param: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def check_gradients(
    cfg: ModelConfig | None = None,
    seed: int = 0,
    step: float = 1e-5,
    tolerance: float = 1e-4,
    max_entries_per_param: int | None = None,
) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    Runs in float64 on a small configuration with a partially masked
    batch and dropout active (fixed seed, so the loss is a deterministic
    function of the parameters).  The relative error denominator is
    floored at 1e-6 so near-zero derivative pairs do not inflate the
    ratio.
    """
    if cfg is None:
        cfg = ModelConfig(
            input_dim=12,
            model_dim=16,
            num_layers=2,
            num_heads=2,
            ffn_dim=32,
            head_hidden=8,
            output_dim=2,
            dropout=0.1,
            max_len=8,
            dtype="float64",
        )
    if cfg.dtype != "float64":
        raise ConfigError("gradient checking requires float64")
    rng = np.random.default_rng(seed)
    b, t = 2, cfg.max_len
    x = rng.standard_normal((b, t, cfg.input_dim))
    target = rng.standard_normal((b, t, cfg.output_dim)) * 0.1
    mask = np.ones((b, t), dtype=bool)
    mask[0, t - 2 :] = False
    mask[1, 0] = False
    params = init_params(cfg, seed=seed + 1)
    dropout_seed = seed + 2

    def loss_at(p):
        l, _, _ = value_and_grad(p, cfg, x, mask, target, train=True, dropout_seed=dropout_seed)
        return l

    _, grads, _ = value_and_grad(params, cfg, x, mask, target, train=True, dropout_seed=dropout_seed)

    worst = 0.0
    worst_name = ""
    checked = 0
    per_param = {}
    pick = np.random.default_rng(seed + 3)
    for name in sorted(params):
        if name in BUFFER_KEYS:
            continue
        flat = params[name].reshape(-1)
        gflat = grads[name].reshape(-1)
        idx = np.arange(flat.size)
        if max_entries_per_param is not None and flat.size > max_entries_per_param:
            idx = np.sort(pick.choice(flat.size, size=max_entries_per_param, replace=False))
        local = 0.0
        for j in idx:
            keep = flat[j]
            flat[j] = keep + step
            lp = loss_at(params)
            flat[j] = keep - step
            lm = loss_at(params)
            flat[j] = keep
            numeric = (lp - lm) / (2.0 * step)
            analytic = gflat[j]
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
            local = max(local, rel)
            checked += 1
        per_param[name] = local
        if local > worst:
            worst = local
            worst_name = name
    return GradCheckReport(
        max_rel_error=worst,
        worst_param=worst_name,
        entries_checked=checked,
        tolerance=tolerance,
        per_param=per_param,
    )
