"""Gated mixer layer and full-model assembly.

One layer computes a convolutional context Z, builds queries/keys from Z by
learned per-feature scale and offset, values from the raw input, runs chunked
causal linear attention, and blends the gated result with the input through a
sigmoid output gate. Blocks wrap the layer with pre-layer-norm and a two-layer
FFN (hidden size 2*d). The structured mixer producing Z is pluggable for
ablations: short-long convolutions, a single long convolution, or a
state-space kernel.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from chela import autodiff as ad
from chela import ssm as _ssm
from chela.attention import chunked_linear_attention_v
from chela.conv import short_kernel_size
from chela.rng import Rng

MIXERS = ("shortlong", "longconv", "ssm")
TASK_HEADS = ("lm", "classification-meanpool", "regression")


@dataclass
class ModelConfig:
    depth: int
    d_model: int
    max_len: int
    vocab_size: int = 0          # 0 for feature-input heads
    task_head: str = "lm"
    chunk: int = 64
    mixer: str = "shortlong"
    seed: int = 0
    in_features: int = 1         # feature channels for non-token inputs
    num_classes: int = 0
    conv_identity: bool = True
    ssm_state_dim: int = 16
    ssm_delta: float = 0.01

    def __post_init__(self):
        if self.depth < 0 or self.d_model < 1 or self.max_len < 1 or self.chunk < 1:
            raise ValueError("depth/d_model/max_len/chunk must be positive")
        if self.task_head not in TASK_HEADS:
            raise ValueError(f"unknown task head {self.task_head!r}")
        if self.mixer not in MIXERS:
            raise ValueError(f"unknown mixer {self.mixer!r}")
        if self.task_head == "lm" and self.vocab_size < 1:
            raise ValueError("lm head requires vocab_size >= 1")
        if self.task_head == "classification-meanpool" and self.num_classes < 1:
            raise ValueError("classification head requires num_classes >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


_ssm_basis_cache: dict[tuple, np.ndarray] = {}


def ssm_kernel_basis(cfg: ModelConfig) -> np.ndarray:
    """[L, d_s] matrix whose row t is A_bar^t B_bar; the per-channel kernel is
    this basis contracted with the channel's readout vector. A_bar/B_bar come
    from the structured init and are fixed (not trained)."""
    key = (cfg.ssm_state_dim, cfg.ssm_delta, cfg.max_len)
    basis = _ssm_basis_cache.get(key)
    if basis is None:
        cont = _ssm.hippo_s4_init(cfg.ssm_state_dim, Rng(0), delta=cfg.ssm_delta)
        disc = _ssm.bilinear_discretize(cont)
        basis = np.empty((cfg.max_len, cfg.ssm_state_dim))
        state = disc.B_bar.copy()
        for t in range(cfg.max_len):
            basis[t] = state
            state = disc.A_bar @ state
        _ssm_basis_cache[key] = basis
    return basis


def init_chela_params(cfg: ModelConfig, rng: Rng | None = None) -> dict[str, np.ndarray]:
    """Flat name->array parameter dict.

    Weight matrices are normal(0, 1/sqrt(d)); biases, offsets zero; scales and
    norm gains one; the output-gate bias starts at zero so the gate opens at
    0.5 and the layer is near-identity for small inputs.
    """
    if rng is None:
        rng = Rng(cfg.seed)
    d, L = cfg.d_model, cfg.max_len
    std = 1.0 / np.sqrt(d)
    p: dict[str, np.ndarray] = {}

    if cfg.task_head == "lm":
        p["embed"] = rng.normal((cfg.vocab_size, d), std=std)
    else:
        p["lift_w"] = rng.normal((cfg.in_features, d), std=std)
        p["lift_b"] = np.zeros(d)

    for i in range(cfg.depth):
        pre = f"blocks.{i}."
        p[pre + "ln1_g"] = np.ones(d)
        p[pre + "ln1_b"] = np.zeros(d)
        p[pre + "ln2_g"] = np.ones(d)
        p[pre + "ln2_b"] = np.zeros(d)
        if cfg.mixer == "shortlong":
            kv = short_kernel_size(L)
            p[pre + "conv_k3"] = rng.normal((d, 3), std=0.5 / 3)
            p[pre + "conv_kvar"] = rng.normal((d, kv), std=0.5 / kv)
        if cfg.mixer in ("shortlong", "longconv"):
            long = rng.normal((d, L), std=1.0 / L)
            p[pre + "conv_long"] = long * np.exp(-0.01 * np.arange(L))
        if cfg.mixer == "ssm":
            p[pre + "ssm_c"] = rng.normal((d, cfg.ssm_state_dim))
        p[pre + "w_v"] = rng.normal((d, d), std=std)
        p[pre + "b_v"] = np.zeros(d)
        p[pre + "w_g"] = rng.normal((d, d), std=std)
        p[pre + "b_g"] = np.zeros(d)
        p[pre + "w_o"] = rng.normal((d, d), std=std)
        p[pre + "b_o"] = np.zeros(d)
        p[pre + "alpha_q"] = np.ones(d)
        p[pre + "beta_q"] = np.zeros(d)
        p[pre + "alpha_k"] = np.ones(d)
        p[pre + "beta_k"] = np.zeros(d)
        p[pre + "attn_gain"] = np.ones(d)
        p[pre + "ffn_w1"] = rng.normal((d, 2 * d), std=std)
        p[pre + "ffn_b1"] = np.zeros(2 * d)
        p[pre + "ffn_w2"] = rng.normal((2 * d, d), std=1.0 / np.sqrt(2 * d))
        p[pre + "ffn_b2"] = np.zeros(d)

    if cfg.task_head == "lm":
        p["head_w"] = rng.normal((d, cfg.vocab_size), std=std)
        p["head_b"] = np.zeros(cfg.vocab_size)
    elif cfg.task_head == "classification-meanpool":
        p["head_w"] = rng.normal((d, cfg.num_classes), std=std)
        p["head_b"] = np.zeros(cfg.num_classes)
    else:
        p["head_w"] = rng.normal((d, 1), std=std)
        p["head_b"] = np.zeros(1)
    return p


def wrap_params(params: dict[str, np.ndarray]) -> dict[str, ad.Var]:
    return {k: ad.Var(v) for k, v in params.items()}


def _vars(params):
    """Accept either plain arrays or Vars."""
    if all(isinstance(v, ad.Var) for v in params.values()):
        return params
    return wrap_params(params)


def mixer_forward(cfg: ModelConfig, p: dict, pre: str, X: ad.Var) -> ad.Var:
    """Structured context Z from the configured mixer."""
    L = X.value.shape[1]
    if L > cfg.max_len:
        raise ValueError(f"sequence length {L} exceeds configured maximum {cfg.max_len}")
    if cfg.mixer == "shortlong":
        h = ad.causal_depthwise_conv(X, p[pre + "conv_k3"]) \
            + ad.causal_depthwise_conv(X, p[pre + "conv_kvar"])
        if cfg.conv_identity:
            h = h + X
        h = ad.silu(h)
        return ad.causal_depthwise_conv(h, p[pre + "conv_long"][:, :L])
    if cfg.mixer == "longconv":
        return ad.causal_depthwise_conv(X, p[pre + "conv_long"][:, :L])
    # ssm: per-channel kernels from the fixed state basis and learned readout
    basis = ssm_kernel_basis(cfg)[:L]                   # [L, d_s]
    kernels = p[pre + "ssm_c"] @ ad.Var(basis.T)        # [d, L]
    return ad.causal_depthwise_conv(X, kernels)


def chela_layer_forward(cfg: ModelConfig, p: dict, pre: str, X: ad.Var) -> ad.Var:
    """Gated attention layer: U = M . G_o + X . (1 - G_o)."""
    p = _vars(p)
    Z = mixer_forward(cfg, p, pre, X)
    Q = ad.mul(Z, p[pre + "alpha_q"]) + p[pre + "beta_q"]
    K = ad.mul(Z, p[pre + "alpha_k"]) + p[pre + "beta_k"]
    V = ad.silu(X @ p[pre + "w_v"] + p[pre + "b_v"])
    A = chunked_linear_attention_v(Q, K, V, cfg.chunk)
    M = ad.mul(ad.rms_norm(A, p[pre + "attn_gain"]),
               ad.silu(Z @ p[pre + "w_g"] + p[pre + "b_g"]))
    Go = ad.sigmoid(Z @ p[pre + "w_o"] + p[pre + "b_o"])
    return ad.mul(M, Go) + X - ad.mul(X, Go)


def chela_block_forward(cfg: ModelConfig, p: dict, pre: str, X: ad.Var) -> ad.Var:
    """Pre-norm block: Xa = layer(LN(X)); Y = FFN(LN(Xa)) + Xa."""
    p = _vars(p)
    Xa = chela_layer_forward(cfg, p, pre, ad.layer_norm(X, p[pre + "ln1_g"], p[pre + "ln1_b"]))
    h = ad.layer_norm(Xa, p[pre + "ln2_g"], p[pre + "ln2_b"])
    h = ad.silu(h @ p[pre + "ffn_w1"] + p[pre + "ffn_b1"]) @ p[pre + "ffn_w2"] + p[pre + "ffn_b2"]
    return h + Xa


def model_forward(cfg: ModelConfig, params: dict, inputs: np.ndarray) -> ad.Var:
    """Embed -> depth x block -> task head.

    inputs: int tokens [B,L] for the lm head, float features [B,L,F] otherwise.
    Returns logits [B,L,vocab] (lm), class logits [B,num_classes]
    (classification-meanpool), or scalar predictions [B] (regression).
    """
    p = _vars(params)
    if cfg.task_head == "lm":
        tokens = np.asarray(inputs)
        if tokens.min() < 0 or tokens.max() >= cfg.vocab_size:
            raise ValueError(f"token ids must lie in [0, {cfg.vocab_size})")
        H = ad.embedding(p["embed"], tokens)
    else:
        feats = np.asarray(inputs, dtype=float)
        H = ad.Var(feats) @ p["lift_w"] + p["lift_b"]
    for i in range(cfg.depth):
        H = chela_block_forward(cfg, p, f"blocks.{i}.", H)
    if cfg.task_head == "lm":
        return H @ p["head_w"] + p["head_b"]
    if cfg.task_head == "classification-meanpool":
        pooled = ad.vmean(H, axis=1)
        return pooled @ p["head_w"] + p["head_b"]
    last = H[:, -1, :]
    out = last @ p["head_w"] + p["head_b"]
    return ad.reshape(out, (out.value.shape[0],))


def parameter_count(cfg: ModelConfig) -> int:
    return sum(v.size for v in init_chela_params(cfg).values())
