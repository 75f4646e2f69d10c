"""Bidirectional-LSTM sequence classifier with analytic backpropagation.

The network is a stack of bidirectional LSTM layers whose top-layer final
states (forward at the last frame, backward at the first frame) are
concatenated, optionally extended with a time-pooled glass-feature summary, and
mapped by one affine layer to two logits. Gate blocks are laid out ``[i, f, g, o]``.

All routines accept a batch axis first; single samples are batches of one.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from ._recurrent import lstm_scan, lstm_scan_back
from .errors import CacheError, ConfigError, FormatError, ShapeError

FLPV_MAGIC = b"FLPV"
FLPV_VERSION = 1


def _sigmoid(x):
    return 0.5 * np.tanh(0.5 * x) + 0.5


@dataclass(frozen=True)
class ModelConfig:
    seq_len: int = 124
    feat_dim: int = 520
    hidden: int = 100
    lstm_layers: int = 3
    glass_fusion: bool = False
    glass_dim: int = 256
    arch: str = "bilstm"
    mlp_hidden: int = 64
    mlp_frames: int = 12

    def __post_init__(self):
        if min(self.seq_len, self.feat_dim, self.hidden, self.lstm_layers) < 1:
            raise ConfigError("seq_len, feat_dim, hidden and lstm_layers must be >= 1")
        if self.arch not in ("bilstm", "mlp"):
            raise ConfigError(f"unknown arch {self.arch!r}")
        if self.glass_fusion and self.glass_dim < 1:
            raise ConfigError("glass_dim must be >= 1 when glass_fusion is on")
        if self.arch == "mlp" and self.glass_fusion:
            raise ConfigError("glass fusion is only defined for the bilstm arch")

    @classmethod
    def desk(cls, **overrides) -> "ModelConfig":
        """Small configuration used by the test suite and the synthetic demos."""
        base = dict(seq_len=12, feat_dim=16, hidden=16, lstm_layers=2, glass_dim=8)
        base.update(overrides)
        return cls(**base)

    @property
    def projection_in(self) -> int:
        if self.arch == "mlp":
            return self.mlp_hidden
        extra = 2 * self.glass_dim if self.glass_fusion else 0
        return 2 * self.hidden + extra

    @property
    def mlp_in(self) -> int:
        return self.mlp_frames * self.feat_dim

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class Layout:
    segments: tuple[tuple[str, tuple[int, ...]], ...]

    @cached_property
    def offsets(self) -> dict[str, tuple[int, int, tuple[int, ...]]]:
        out, pos = {}, 0
        for name, shape in self.segments:
            n = int(np.prod(shape, dtype=np.int64))
            out[name] = (pos, pos + n, shape)
            pos += n
        return out

    @property
    def size(self) -> int:
        if not self.segments:
            return 0
        return self.offsets[self.segments[-1][0]][1]

    def describe(self) -> str:
        return ";".join(f"{n}:{'x'.join(str(d) for d in s)}" for n, s in self.segments)

    @classmethod
    def parse(cls, text: str) -> "Layout":
        segs = []
        if text:
            for item in text.split(";"):
                name, _, dims = item.rpartition(":")
                if not name or not dims:
                    raise ValueError(f"bad layout segment {item!r}")
                segs.append((name, tuple(int(d) for d in dims.split("x"))))
        return cls(tuple(segs))


def _lstm_names(layer: int, direction: str) -> tuple[str, str, str]:
    p = f"lstm{layer}.{direction}"
    return f"{p}.W_ih", f"{p}.W_hh", f"{p}.b"


def layout_for(cfg: ModelConfig) -> Layout:
    segs = []
    if cfg.arch == "bilstm":
        H = cfg.hidden
        for layer in range(cfg.lstm_layers):
            in_w = cfg.feat_dim if layer == 0 else 2 * H
            for d in ("fwd", "bwd"):
                w_ih, w_hh, b = _lstm_names(layer, d)
                segs += [(w_ih, (4 * H, in_w)), (w_hh, (4 * H, H)), (b, (4 * H,))]
    else:
        segs += [("mlp.W1", (cfg.mlp_hidden, cfg.mlp_in)), ("mlp.b1", (cfg.mlp_hidden,))]
    segs += [("proj.W", (2, cfg.projection_in)), ("proj.b", (2,))]
    return Layout(tuple(segs))


@dataclass
class ParamVector:
    values: np.ndarray
    layout: Layout

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or self.values.size != self.layout.size:
            raise ShapeError(
                f"payload of {self.values.size} values does not tile layout of {self.layout.size}")

    def view(self, name: str) -> np.ndarray:
        start, stop, shape = self.layout.offsets[name]
        return self.values[start:stop].reshape(shape)

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout)

    def zeros_like(self) -> "ParamVector":
        return ParamVector(np.zeros_like(self.values), self.layout)

    def with_values(self, values) -> "ParamVector":
        return ParamVector(values, self.layout)

    def check_compatible(self, other: "ParamVector") -> None:
        if self.layout != other.layout:
            raise ShapeError("parameter layouts differ")

    def __len__(self):
        return self.values.size


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> ParamVector:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, forget biases 1."""
    layout = layout_for(cfg)
    pv = ParamVector(np.zeros(layout.size), layout)
    for name, shape in layout.segments:
        if len(shape) == 2:
            bound = 1.0 / np.sqrt(shape[1])
            pv.view(name)[...] = rng.uniform(-bound, bound, size=shape)
        elif name.startswith("lstm"):
            H = shape[0] // 4
            pv.view(name)[H:2 * H] = 1.0
    return pv


# ---------------------------------------------------------------- LSTM pieces

def lstm_cell(x_t, h_prev, c_prev, W_ih, W_hh, b):
    """One LSTM step. Returns ``(h, c, gates)`` with gates ``[i, f, g, o]`` activated."""
    a = np.asarray(x_t) @ W_ih.T + np.asarray(h_prev) @ W_hh.T + b
    H = W_hh.shape[1]
    gates = _sigmoid(a)
    gates[..., 2 * H:3 * H] = np.tanh(a[..., 2 * H:3 * H])
    i, f, g, o = (gates[..., k * H:(k + 1) * H] for k in range(4))
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c, gates


@dataclass
class _DirCache:
    seq: np.ndarray      # (B, T, in) inputs in processing order
    gates: np.ndarray    # (B, T, 4H)
    cs: np.ndarray       # (B, T, H)
    tcs: np.ndarray      # tanh(c)
    hs: np.ndarray       # (B, T, H) in processing order


def _run_direction(seq, W_ih, W_hh, b) -> _DirCache:
    pre = np.ascontiguousarray(seq @ W_ih.T + b)
    gates, cs, tcs, hs = lstm_scan(pre, np.ascontiguousarray(W_hh))
    return _DirCache(seq, gates, cs, tcs, hs)


def _back_direction(dH, cache: _DirCache, W_ih, W_hh):
    """BPTT through one direction; ``dH`` is dLoss/dh_t in processing order."""
    B, T, H = cache.hs.shape
    dA = lstm_scan_back(np.ascontiguousarray(dH), cache.gates, cache.cs, cache.tcs,
                        np.ascontiguousarray(W_hh))
    flat = dA.reshape(B * T, 4 * H)
    h_prev = np.concatenate([np.zeros((B, 1, H)), cache.hs[:, :-1]], axis=1).reshape(B * T, H)
    dW_ih = flat.T @ cache.seq.reshape(B * T, -1)
    dW_hh = flat.T @ h_prev
    db = flat.sum(axis=0)
    dseq = dA @ W_ih
    return dseq, dW_ih, dW_hh, db


# ---------------------------------------------------------------- forward pass

@dataclass
class ForwardCache:
    cfg: ModelConfig
    layout: Layout
    inputs: np.ndarray                  # (B, T, F) or (B, mlp_in)
    readout: np.ndarray                 # (B, 2H) or (B, mlp_hidden)
    features: np.ndarray                # projection input
    logits: np.ndarray                  # (B, 2)
    probs: np.ndarray
    dirs: list = field(default_factory=list)   # per layer: (fwd cache, bwd cache)
    glass: np.ndarray | None = None     # (B, 2*glass_dim)

    @property
    def batch(self) -> int:
        return self.logits.shape[0]


def _as_batch(X, trailing: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == trailing:
        X = X[None]
    if X.ndim != trailing + 1:
        raise ShapeError(f"input has {X.ndim} axes, expected {trailing} or {trailing + 1}")
    return X


def glass_summary(G) -> np.ndarray:
    """Per-dimension mean over time followed by population std over time."""
    G = np.asarray(G, dtype=np.float64)
    if G.ndim < 2 or G.shape[-2] < 2:
        raise ShapeError("glass summary needs at least two frames")
    return np.concatenate([G.mean(axis=-2), G.std(axis=-2)], axis=-1)


def project_logits(features, params: ParamVector) -> np.ndarray:
    W = params.view("proj.W")
    features = np.asarray(features, dtype=np.float64)
    if features.shape[-1] != W.shape[1]:
        raise ShapeError(f"projection expects width {W.shape[1]}, got {features.shape[-1]}")
    return features @ W.T + params.view("proj.b")


def softmax_probs(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(z, y):
    """Cross-entropy of logits ``z`` against integer labels ``y``; returns ``(loss, probs)``."""
    z = np.asarray(z, dtype=np.float64)
    m = z.max(axis=-1, keepdims=True)
    shifted = z - m
    lse = np.log(np.exp(shifted).sum(axis=-1))
    probs = np.exp(shifted - lse[..., None])
    y = np.asarray(y)
    picked = np.take_along_axis(shifted, y.reshape(y.shape + (1,)).astype(np.intp), axis=-1)[..., 0]
    return lse - picked, probs


def bilstm_forward(X, params: ParamVector, cfg: ModelConfig):
    """Run the stacked bi-LSTM; returns ``(readout, per-layer direction caches)``."""
    X = _as_batch(X, 2)
    if X.shape[2] != cfg.feat_dim:
        raise ShapeError(f"expected feature width {cfg.feat_dim}, got {X.shape[2]}")
    inp = X
    dirs = []
    for layer in range(cfg.lstm_layers):
        fw = _run_direction(inp, *(params.view(n) for n in _lstm_names(layer, "fwd")))
        bw = _run_direction(inp[:, ::-1], *(params.view(n) for n in _lstm_names(layer, "bwd")))
        dirs.append((fw, bw))
        inp = np.concatenate([fw.hs, bw.hs[:, ::-1]], axis=2)
    top_f, top_b = dirs[-1]
    readout = np.concatenate([top_f.hs[:, -1], top_b.hs[:, -1]], axis=1)
    return readout, dirs


def forward(params: ParamVector, cfg: ModelConfig, X, G=None) -> ForwardCache:
    """Full pipeline to logits and class probabilities."""
    if params.layout != layout_for(cfg):
        raise ShapeError("parameter layout does not match model config")
    if cfg.arch == "mlp":
        X = _as_batch(X, 1)
        if X.shape[1] != cfg.mlp_in:
            raise ShapeError(f"MLP expects input width {cfg.mlp_in}, got {X.shape[1]}")
        hidden = np.tanh(X @ params.view("mlp.W1").T + params.view("mlp.b1"))
        logits = project_logits(hidden, params)
        return ForwardCache(cfg, params.layout, X, hidden, hidden, logits, softmax_probs(logits))
    readout, dirs = bilstm_forward(X, params, cfg)
    gsum = None
    feats = readout
    if cfg.glass_fusion:
        if G is None:
            raise ShapeError("glass_fusion is on but no glass features were given")
        G = _as_batch(G, 2)
        if G.shape[2] != cfg.glass_dim or G.shape[0] != readout.shape[0]:
            raise ShapeError(f"glass input shape {G.shape} does not match config")
        gsum = glass_summary(G)
        feats = np.concatenate([readout, gsum], axis=1)
    logits = project_logits(feats, params)
    return ForwardCache(cfg, params.layout, dirs[0][0].seq, readout, feats, logits,
                        softmax_probs(logits), dirs, gsum)


def model_backward(cache: ForwardCache, y, params: ParamVector, cfg: ModelConfig,
                   dreadout=None, scale: float = 1.0) -> ParamVector:
    """Gradient of ``scale * sum_b xent(logits_b, y_b)`` w.r.t. every parameter.

    ``dreadout`` adds an external gradient on the readout (already scaled).
    """
    if cache.layout != params.layout or cache.cfg != cfg:
        raise CacheError("forward cache was produced for a different model")
    y = np.atleast_1d(np.asarray(y)).astype(np.intp)
    if y.shape != (cache.batch,):
        raise CacheError(f"{y.size} labels for a cached batch of {cache.batch}")
    grad = params.zeros_like()
    dz = cache.probs.copy()
    dz[np.arange(cache.batch), y] -= 1.0
    dz *= scale
    grad.view("proj.W")[...] = dz.T @ cache.features
    grad.view("proj.b")[...] = dz.sum(axis=0)
    dfeat = dz @ params.view("proj.W")
    dread = dfeat[:, :cache.readout.shape[1]]
    if dreadout is not None:
        dread = dread + dreadout

    if cfg.arch == "mlp":
        dpre = dread * (1.0 - cache.readout ** 2)
        grad.view("mlp.W1")[...] = dpre.T @ cache.inputs
        grad.view("mlp.b1")[...] = dpre.sum(axis=0)
        return grad

    H = cfg.hidden
    B = cache.batch
    T = cache.dirs[0][0].hs.shape[1]
    d_f = np.zeros((B, T, H))
    d_b = np.zeros((B, T, H))
    d_f[:, -1] = dread[:, :H]
    d_b[:, -1] = dread[:, H:2 * H]
    for layer in range(cfg.lstm_layers - 1, -1, -1):
        fw, bw = cache.dirs[layer]
        d_in = None
        for d, dc, dH in (("fwd", fw, d_f), ("bwd", bw, d_b)):
            w_ih, w_hh, b = _lstm_names(layer, d)
            dseq, gW_ih, gW_hh, gb = _back_direction(dH, dc, params.view(w_ih), params.view(w_hh))
            grad.view(w_ih)[...] = gW_ih
            grad.view(w_hh)[...] = gW_hh
            grad.view(b)[...] = gb
            if d == "bwd":
                dseq = dseq[:, ::-1]
            d_in = dseq if d_in is None else d_in + dseq
        if layer:
            d_f = np.ascontiguousarray(d_in[..., :H])
            d_b = np.ascontiguousarray(d_in[:, ::-1, H:])
    return grad


def loss_and_grad(params: ParamVector, cfg: ModelConfig, X, y, G=None):
    """Mean cross-entropy over the batch and its gradient."""
    cache = forward(params, cfg, X, G)
    losses, _ = softmax_xent(cache.logits, y)
    B = cache.batch
    return float(losses.mean()), model_backward(cache, y, params, cfg, scale=1.0 / B), cache


def mlp_forward_backward(X_flat, params: ParamVector, cfg: ModelConfig, y):
    """MLP variant: returns ``(logits, mean loss, gradient)``."""
    if cfg.arch != "mlp":
        raise ConfigError("mlp_forward_backward requires arch='mlp'")
    loss, grad, cache = loss_and_grad(params, cfg, X_flat, y)
    return cache.logits, loss, grad


def predict_proba(params: ParamVector, cfg: ModelConfig, X, G=None) -> np.ndarray:
    return forward(params, cfg, X, G).probs[:, 1]


def predict(params: ParamVector, cfg: ModelConfig, sample) -> float:
    X, G = sample_inputs([sample], cfg)
    return float(predict_proba(params, cfg, X, G)[0])


def sample_inputs(samples: Sequence, cfg: ModelConfig):
    """Stack samples into the ``(X, G)`` arrays the model consumes."""
    from .data.preprocess import downsample_for_mlp

    if cfg.arch == "mlp":
        rows = []
        for s in samples:
            f = s.features
            if f.shape[0] != cfg.mlp_frames:
                f = downsample_for_mlp(f)
            rows.append(f.reshape(-1))
        return np.stack(rows), None
    X = np.stack([s.features for s in samples])
    G = None
    if cfg.glass_fusion:
        if any(s.glass is None for s in samples):
            raise ShapeError("glass_fusion is on but a sample carries no glass features")
        G = np.stack([s.glass for s in samples])
    return X, G


# ---------------------------------------------------------------- FLPV format

def write_flpv(pv: ParamVector) -> bytes:
    desc = pv.layout.describe().encode("utf-8")
    return b"".join([
        FLPV_MAGIC,
        struct.pack("<HI", FLPV_VERSION, len(desc)),
        desc,
        pv.values.astype("<f8").tobytes(),
    ])


def read_flpv(buf: bytes, offset: int = 0) -> tuple[ParamVector, int]:
    """Decode one FLPV block starting at ``offset``; returns it and the end offset."""
    mv = memoryview(buf)
    if bytes(mv[offset:offset + 4]) != FLPV_MAGIC:
        raise FormatError("bad FLPV magic", offset)
    pos = offset + 4
    if len(mv) < pos + 6:
        raise FormatError("truncated FLPV header", len(mv))
    version, dlen = struct.unpack_from("<HI", mv, pos)
    if version != FLPV_VERSION:
        raise FormatError(f"unsupported FLPV version {version}", pos)
    pos += 6
    if len(mv) < pos + dlen:
        raise FormatError("truncated FLPV layout descriptor", len(mv))
    try:
        layout = Layout.parse(bytes(mv[pos:pos + dlen]).decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise FormatError(f"unreadable layout descriptor: {exc}", pos) from None
    pos += dlen
    nbytes = 8 * layout.size
    if len(mv) < pos + nbytes:
        raise FormatError("truncated FLPV payload", len(mv))
    values = np.frombuffer(mv[pos:pos + nbytes], dtype="<f8").astype(np.float64)
    return ParamVector(values, layout), pos + nbytes


def load_flpv(buf: bytes) -> ParamVector:
    pv, end = read_flpv(buf)
    if end != len(buf):
        raise FormatError("trailing bytes after FLPV block", end)
    return pv
