"""Saliency-token attention networks and convolutional baselines.

The attentive trunk embeds the N_C x R x R observation as non-overlapping
P x P patch tokens, prepends a trainable saliency token, adds position
embeddings, and runs the token sequence through a pre-norm transformer
encoder L times. Only the saliency token's output feeds the value head,
and its attention row over the patch tokens is the interpretability
heatmap. Heads: a plain fully-connected Q head and a distributional
quantile head (cosine tau embedding + dueling decomposition).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

ALGO_DA3_DQN = "da3-dqn"
ALGO_DA3_IQN = "da3-iqn"
ALGO_DQN = "dqn"
ALGO_IQN = "iqn"
ALGOS = (ALGO_DA3_DQN, ALGO_DA3_IQN, ALGO_DQN, ALGO_IQN)


@dataclass
class NetConfig:
    algo: str = ALGO_DA3_DQN
    n_channels: int = 3
    window: int = 7             # R
    patch: int = 1              # P
    embed_dim: int = 64         # C
    heads: int = 4              # h
    loops: int = 1              # L
    ff_mult: int = 2
    n_actions: int = 4
    n_cos: int = 64
    # L>1 may either reuse one block's parameters every pass or stack L
    # distinct blocks; with the shipped L=1 the two coincide.
    share_loop_params: bool = True

    @property
    def grid_side(self) -> int:
        return self.window // self.patch

    @property
    def n_tokens(self) -> int:
        return self.grid_side * self.grid_side      # T, excluding the saliency token

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads

    @property
    def distributional(self) -> bool:
        return self.algo in (ALGO_DA3_IQN, ALGO_IQN)

    @property
    def attentive(self) -> bool:
        return self.algo in (ALGO_DA3_DQN, ALGO_DA3_IQN)


@dataclass
class AttentionRecord:
    """Per loop iteration, per head: row-stochastic (T+1)x(T+1) weights
    (leading batch axis when the forward was batched)."""

    weights: list[list[np.ndarray]] = field(default_factory=list)

    @property
    def n_loops(self) -> int:
        return len(self.weights)


def extract_heatmap(record: AttentionRecord, grid_side: int, reduce: str = "mean"):
    """Saliency-row heatmap(s) from the final loop iteration.

    Returns the token-0 attention row over the patch tokens, reshaped
    row-major to grid_side x grid_side. ``reduce="mean"`` averages heads,
    ``"per-head"`` returns one grid per head.
    """
    if not record.weights:
        raise ValueError("empty attention record")
    final = record.weights[-1]
    grids = [w[..., 0, 1:].reshape(w.shape[:-2] + (grid_side, grid_side))
             for w in final]
    if reduce == "per-head":
        return grids
    if reduce == "mean":
        return np.mean(grids, axis=0)
    raise ValueError(f"unknown reduction {reduce!r}")


# ---------------------------------------------------------------------------
# initializers
# ---------------------------------------------------------------------------

def _xavier(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return ad.param(rng.uniform(-limit, limit, size=shape))


def _linear(rng, n_in, n_out):
    return _xavier(rng, (n_in, n_out), n_in, n_out), ad.param(np.zeros(n_out))


# ---------------------------------------------------------------------------
# attention primitives
# ---------------------------------------------------------------------------

def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor):
    """softmax(Q K^T / sqrt(d_k)) V; returns (output, weights)."""
    dk = q.shape[-1]
    if dk == 0:
        raise ValueError("scaled_dot_attention: zero-width keys")
    scores = ad.scale(ad.matmul(q, ad.transpose(k, _swap_last2(k.ndim))), 1.0 / math.sqrt(dk))
    weights = ad.softmax_rows(scores)
    return ad.matmul(weights, v), weights


def _swap_last2(ndim: int):
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return axes


def multi_head_attention(x: Tensor, wq: Tensor, wk: Tensor, wv: Tensor, wo: Tensor):
    """Multi-head self-attention over a batch of token sequences.

    ``x`` is (B, T, C); ``wq``/``wk``/``wv`` stack the per-head projections
    as (h, C, C//h). Head outputs are concatenated and projected by ``wo``.
    Returns (output, weights) with weights (B, h, T, T)."""
    B, T, C = x.shape
    h, _, d = wq.shape
    xb = ad.reshape(x, (B, 1, T, C))
    q = ad.matmul(xb, wq)
    k = ad.matmul(xb, wk)
    v = ad.matmul(xb, wv)
    o, weights = scaled_dot_attention(q, k, v)          # (B,h,T,d), (B,h,T,T)
    merged = ad.reshape(ad.transpose(o, (0, 2, 1, 3)), (B, T, h * d))
    return ad.matmul(merged, wo), weights


def embed_state(obs: Tensor, kernels: Tensor, bias: Tensor,
                saliency: Tensor, pos: Tensor, patch: int) -> Tensor:
    """Patch-project the observation, flatten to tokens, prepend the saliency
    token and add position embeddings. Output: (B,) (T+1) x C."""
    feat = ad.conv2d_patch(obs, kernels, bias, stride=patch)     # (B,C,r,r)
    squeeze = feat.ndim == 3
    if squeeze:
        feat = ad.reshape(feat, (1,) + feat.shape)
    B, C, ri, rj = feat.shape
    tokens = ad.transpose(ad.reshape(feat, (B, C, ri * rj)), (0, 2, 1))   # (B,T,C)
    sal = ad.broadcast_to(ad.reshape(saliency, (1, 1, C)), (B, 1, C))
    x = ad.add(ad.concat([sal, tokens], axis=1), pos)
    if squeeze:
        x = ad.select(x, axis=0, index=0)
    return x


class SaliencyQNetwork:
    """Attentive trunk feeding either the plain Q head or the quantile head."""

    def __init__(self, cfg: NetConfig, rng: np.random.Generator):
        if cfg.embed_dim % cfg.heads != 0:
            raise ValueError(f"heads ({cfg.heads}) must divide embed_dim ({cfg.embed_dim})")
        if cfg.window % cfg.patch != 0:
            raise ValueError(f"patch {cfg.patch} must divide window {cfg.window}")
        self.cfg = cfg
        C, P, NC = cfg.embed_dim, cfg.patch, cfg.n_channels
        T = cfg.n_tokens
        p: dict[str, Tensor] = {}
        p["embed.kernels"] = _xavier(rng, (C, NC, P, P), NC * P * P, C * P * P)
        p["embed.bias"] = ad.param(np.zeros(C))
        p["embed.saliency"] = ad.param(rng.normal(0.0, 0.02, size=C))
        p["embed.pos"] = ad.param(rng.normal(0.0, 0.02, size=(T + 1, C)))
        n_blocks = 1 if cfg.share_loop_params else cfg.loops
        d, ff = cfg.head_dim, cfg.ff_mult * C
        for b in range(n_blocks):
            # per-head projections stacked along axis 0: (h, C, C//h)
            pre = f"block{b}"
            p[f"{pre}.wq"] = _xavier(rng, (cfg.heads, C, d), C, d)
            p[f"{pre}.wk"] = _xavier(rng, (cfg.heads, C, d), C, d)
            p[f"{pre}.wv"] = _xavier(rng, (cfg.heads, C, d), C, d)
            p[f"{pre}.wo"] = _xavier(rng, (C, C), C, C)
            p[f"{pre}.ln1.gain"] = ad.param(np.ones(C))
            p[f"{pre}.ln1.bias"] = ad.param(np.zeros(C))
            p[f"{pre}.ln2.gain"] = ad.param(np.ones(C))
            p[f"{pre}.ln2.bias"] = ad.param(np.zeros(C))
            p[f"{pre}.ff.w1"], p[f"{pre}.ff.b1"] = _linear(rng, C, ff)
            p[f"{pre}.ff.w2"], p[f"{pre}.ff.b2"] = _linear(rng, ff, C)
        if cfg.distributional:
            _init_iqn_head(p, cfg, rng, feature_dim=C)
        else:
            p["head.w1"], p["head.b1"] = _linear(rng, C, C)
            p["head.w2"], p["head.b2"] = _linear(rng, C, cfg.n_actions)
        self.params = p

    def _block(self, x: Tensor, b: int, capture: Optional[list]) -> Tensor:
        p, cfg = self.params, self.cfg
        pre = f"block{b}"
        y = ad.layer_norm(x, p[f"{pre}.ln1.gain"], p[f"{pre}.ln1.bias"])
        attn, weights = multi_head_attention(
            y, p[f"{pre}.wq"], p[f"{pre}.wk"], p[f"{pre}.wv"], p[f"{pre}.wo"])
        if capture is not None:
            capture.extend(weights.data[:, l].copy() for l in range(cfg.heads))
        x = ad.add(x, attn)
        z = ad.layer_norm(x, p[f"{pre}.ln2.gain"], p[f"{pre}.ln2.bias"])
        h = ad.gelu(ad.add(ad.matmul(z, p[f"{pre}.ff.w1"]), p[f"{pre}.ff.b1"]))
        return ad.add(x, ad.add(ad.matmul(h, p[f"{pre}.ff.w2"]), p[f"{pre}.ff.b2"]))

    def encoder_forward(self, tokens: Tensor, capture: bool = False):
        cfg = self.cfg
        if cfg.loops < 1:
            raise ValueError("loop count must be >= 1")
        record = AttentionRecord() if capture else None
        x = tokens
        for i in range(cfg.loops):
            b = 0 if cfg.share_loop_params else i
            cap = [] if capture else None
            x = self._block(x, b, cap)
            if capture:
                record.weights.append(cap)
        return x, record

    def forward(self, obs, taus: Optional[np.ndarray] = None, capture: bool = False):
        """obs: (B,) N_C x R x R array or Tensor. Plain head returns (B,) A
        action values; quantile head returns (B,) K x A values for the given
        tau levels and requires them."""
        p, cfg = self.params, self.cfg
        obs = ad.as_tensor(obs)
        squeeze = obs.ndim == 3
        if squeeze:
            obs = ad.reshape(obs, (1,) + obs.shape)
            if taus is not None and np.asarray(taus).ndim == 1:
                taus = np.asarray(taus)[None]
        tokens = embed_state(obs, p["embed.kernels"], p["embed.bias"],
                             p["embed.saliency"], p["embed.pos"], cfg.patch)
        x, record = self.encoder_forward(tokens, capture=capture)
        if squeeze and record is not None:
            record.weights = [[w[0] for w in per_loop] for per_loop in record.weights]
        s = ad.select(x, axis=-2, index=0)           # saliency token output
        if cfg.distributional:
            if taus is None:
                raise ValueError("quantile head requires tau levels")
            out = _iqn_head_forward(p, cfg, s, taus)
        else:
            h = ad.gelu(ad.add(ad.matmul(s, p["head.w1"]), p["head.b1"]))
            out = ad.add(ad.matmul(h, p["head.w2"]), p["head.b2"])
        if squeeze:
            out = ad.select(out, axis=0, index=0)
        return out, record


class ConvQNetwork:
    """Baseline trunk: two convolutions with max pooling and a fully
    connected layer, no transformer encoder (and no dueling for the plain
    Q head)."""

    def __init__(self, cfg: NetConfig, rng: np.random.Generator):
        self.cfg = cfg
        NC = cfg.n_channels
        c1, c2 = 32, 64
        side = cfg.window // 2 // 2
        flat = c2 * side * side
        p: dict[str, Tensor] = {}
        p["conv1.k"] = _xavier(rng, (c1, NC, 3, 3), NC * 9, c1 * 9)
        p["conv1.b"] = ad.param(np.zeros(c1))
        p["conv2.k"] = _xavier(rng, (c2, c1, 3, 3), c1 * 9, c2 * 9)
        p["conv2.b"] = ad.param(np.zeros(c2))
        p["fc.w"], p["fc.b"] = _linear(rng, flat, 64)
        if cfg.distributional:
            _init_iqn_head(p, cfg, rng, feature_dim=64)
        else:
            p["head.w"], p["head.b"] = _linear(rng, 64, cfg.n_actions)
        self.params = p
        self._flat = flat

    def _trunk(self, obs: Tensor) -> Tensor:
        p = self.params
        squeeze = obs.ndim == 3
        if squeeze:
            obs = ad.reshape(obs, (1,) + obs.shape)
        x = ad.maxpool2d(ad.gelu(ad.conv2d(obs, p["conv1.k"], p["conv1.b"], padding=1)))
        x = ad.maxpool2d(ad.gelu(ad.conv2d(x, p["conv2.k"], p["conv2.b"], padding=1)))
        x = ad.reshape(x, (x.shape[0], self._flat))
        feat = ad.gelu(ad.add(ad.matmul(x, p["fc.w"]), p["fc.b"]))
        if squeeze:
            feat = ad.select(feat, axis=0, index=0)
        return feat

    def forward(self, obs, taus: Optional[np.ndarray] = None, capture: bool = False):
        p, cfg = self.params, self.cfg
        obs = ad.as_tensor(obs)
        feat = self._trunk(obs)
        if cfg.distributional:
            if taus is None:
                raise ValueError("quantile head requires tau levels")
            return _iqn_head_forward(p, cfg, feat, taus), None
        out = ad.add(ad.matmul(_as_rows(feat), p["head.w"]), p["head.b"])
        if feat.ndim == 1:
            out = ad.select(out, axis=0, index=0)
        return out, None


# ---------------------------------------------------------------------------
# quantile (IQN-style) head: cosine tau embedding + dueling decomposition
# ---------------------------------------------------------------------------

def _init_iqn_head(p: dict, cfg: NetConfig, rng, feature_dim: int):
    C = feature_dim
    p["head.cos.w"], p["head.cos.b"] = _linear(rng, cfg.n_cos, C)
    p["head.v.w1"], p["head.v.b1"] = _linear(rng, C, C)
    p["head.v.w2"], p["head.v.b2"] = _linear(rng, C, 1)
    p["head.a.w1"], p["head.a.b1"] = _linear(rng, C, C)
    p["head.a.w2"], p["head.a.b2"] = _linear(rng, C, cfg.n_actions)


def _iqn_head_forward(p: dict, cfg: NetConfig, feat: Tensor, taus: np.ndarray) -> Tensor:
    """feat: (B,) C; taus: (B,) K in (0,1). Returns (B,) K x A."""
    taus = np.asarray(taus, dtype=np.float64)
    squeeze = feat.ndim == 1
    if squeeze:
        feat = ad.reshape(feat, (1,) + feat.shape)
        taus = taus.reshape((1,) + taus.shape)
    if taus.ndim != 2 or np.any(taus <= 0.0) or np.any(taus >= 1.0):
        raise ValueError("tau levels must be a (B, K) array in (0, 1)")
    B, C = feat.shape
    K = taus.shape[1]
    basis = np.cos(np.pi * np.arange(cfg.n_cos) * taus[:, :, None])     # (B,K,n_cos)
    phi = ad.relu(ad.add(ad.matmul(ad.as_tensor(basis), p["head.cos.w"]),
                         p["head.cos.b"]))                               # (B,K,C)
    psi = ad.mul(phi, ad.reshape(feat, (B, 1, C)))
    hv = ad.gelu(ad.add(ad.matmul(psi, p["head.v.w1"]), p["head.v.b1"]))
    v = ad.add(ad.matmul(hv, p["head.v.w2"]), p["head.v.b2"])            # (B,K,1)
    ha = ad.gelu(ad.add(ad.matmul(psi, p["head.a.w1"]), p["head.a.b1"]))
    a = ad.add(ad.matmul(ha, p["head.a.w2"]), p["head.a.b2"])            # (B,K,A)
    q = ad.add(v, ad.sub(a, ad.mean(a, axis=-1, keepdims=True)))
    if squeeze:
        q = ad.select(q, axis=0, index=0)
    return q


def _as_rows(t: Tensor) -> Tensor:
    return ad.reshape(t, (1,) + t.shape) if t.ndim == 1 else t


def build_network(cfg: NetConfig, rng: np.random.Generator):
    if cfg.algo not in ALGOS:
        raise ValueError(f"unknown algorithm {cfg.algo!r}; have {ALGOS}")
    return SaliencyQNetwork(cfg, rng) if cfg.attentive else ConvQNetwork(cfg, rng)


def parameter_count(net) -> int:
    return sum(p.data.size for p in net.params.values())
