"""ViT encoder, causally masked Transformer decoder, their composition, and a GRU baseline.

Every model exposes ``forward(strains, context)`` returning a ``(B, n, 6)``
stress tensor, where ``context`` is an image batch for the full surrogate and
is ignored (or replaced by a zero feature vector) by the sequence-only models.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .attention import (
    AttentionConfig,
    ConfigError,
    PositionalEncoding,
    causal_mask,
    embed_with_position,
    init_block,
    mask_bias,
    transformer_block,
)
from .tensor import DimensionError, ParameterSet, Tensor

FEATURE_TOKEN_VALUE = 0.5


class InputError(ValueError):
    """Model input violates its contract (non-binary image, wrong width, ...)."""


@dataclass(frozen=True)
class ViTTransformerConfig:
    patch_size: int = 8
    image_side: int = 128
    channels: int = 1
    enc_embed: int = 80
    enc_heads: int = 2
    enc_ff: int = 500
    enc_layers: int = 6
    enc_out: int = 64
    dec_embed: int = 120
    dec_heads: int = 10
    dec_ff: int = 800
    dec_layers: int = 6
    dec_in: int = 70
    out_ffn_dim: int = 720
    out_ffn_layers: int = 2
    strain_dim: int = 6
    stress_dim: int = 6
    leaky_slope: float = 0.01
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.dec_in != self.strain_dim + self.enc_out:
            raise ConfigError(f"dec_in {self.dec_in} != strain_dim {self.strain_dim} + enc_out {self.enc_out}")
        if self.image_side % self.patch_size:
            raise ConfigError(f"patch size {self.patch_size} does not divide image side {self.image_side}")
        if self.out_ffn_layers != 2:
            raise ConfigError("the output network has exactly two linear maps")
        AttentionConfig(self.enc_embed, self.enc_heads)
        AttentionConfig(self.dec_embed, self.dec_heads)

    @property
    def n_patches(self) -> int:
        return (self.image_side // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch_size ** 2 * self.channels

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ViTTransformerConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        out = {}
        for k, v in d.items():
            if k in kinds:
                out[k] = float(v) if kinds[k] in ("float", float) else int(v)
        return cls(**out)


@dataclass(frozen=True)
class GRUConfig:
    layers: int = 3
    input: int = 6
    hidden: int = 50
    fc_out: int = 6

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GRUConfig":
        return cls(**{f.name: int(d[f.name]) for f in fields(cls) if f.name in d})


def patchify(image: np.ndarray, p: int) -> np.ndarray:
    """Split ``(..., H, W)`` images into row-major flattened ``p x p`` patches.

    Patch ``(r, c)`` becomes row ``r * (W // p) + c`` of the ``(..., N, p*p)`` output.
    """
    image = np.asarray(image)
    H, W = image.shape[-2:]
    if H % p or W % p:
        raise ConfigError(f"patch size {p} does not divide image {H}x{W}")
    lead = image.shape[:-2]
    x = image.reshape(*lead, H // p, p, W // p, p)
    x = np.moveaxis(x, -3, -2)  # (..., H/p, W/p, p, p)
    return x.reshape(*lead, (H // p) * (W // p), p * p).astype(np.float64)


def _check_binary(images: np.ndarray) -> None:
    if not np.isin(images, (0, 1)).all():
        raise InputError("microstructure images must be binary (0 = matrix, 1 = fiber)")


class ViTEncoder:
    """Patch embedding + feature token + unmasked blocks + linear compression."""

    def __init__(self, cfg: ViTTransformerConfig, params: ParameterSet, rng: np.random.Generator, prefix="encoder"):
        self.cfg = cfg
        self.params = params
        self.prefix = prefix
        self.attn = AttentionConfig(cfg.enc_embed, cfg.enc_heads)
        self.pe = PositionalEncoding(cfg.enc_embed, max(512, cfg.n_patches + 1))
        d, k = cfg.enc_embed, cfg.patch_dim
        params.add(f"{prefix}.embed.w", T.init_uniform(rng, (k, d), k))
        params.add(f"{prefix}.embed.b", T.init_uniform(rng, (d,), k))
        for i in range(cfg.enc_layers):
            init_block(params, f"{prefix}.layer{i}", self.attn, cfg.enc_ff, rng)
        params.add(f"{prefix}.proj.w", T.init_uniform(rng, (d, cfg.enc_out), d))
        params.add(f"{prefix}.proj.b", T.init_uniform(rng, (cfg.enc_out,), d))

    def __call__(self, images) -> Tensor:
        images = np.asarray(images)
        single = images.ndim == 2
        if single:
            images = images[None]
        _check_binary(images)
        cfg, p, pre = self.cfg, self.params, self.prefix
        B = images.shape[0]
        patches = Tensor(patchify(images, cfg.patch_size))
        tokens = T.matmul(patches, p[f"{pre}.embed.w"])
        ef_in = Tensor(np.full((B, 1, cfg.enc_embed), FEATURE_TOKEN_VALUE))
        z = T.concat([ef_in, tokens], axis=1) + p[f"{pre}.embed.b"] + self.pe(cfg.n_patches + 1)
        for i in range(cfg.enc_layers):
            z = transformer_block(z, p, f"{pre}.layer{i}", self.attn, None)
        out = T.matmul(z, p[f"{pre}.proj.w"]) + p[f"{pre}.proj.b"]
        ef_out = out[:, 0, :]
        return ef_out[0] if single else ef_out


class TransformerDecoder:
    """Masked self-attention stack over ``[strain ; broadcast feature]`` plus a LeakyReLU output network."""

    def __init__(self, cfg: ViTTransformerConfig, params: ParameterSet, rng: np.random.Generator, prefix="decoder"):
        self.cfg = cfg
        self.params = params
        self.prefix = prefix
        self.attn = AttentionConfig(cfg.dec_embed, cfg.dec_heads)
        self.pe = PositionalEncoding(cfg.dec_embed)
        d, k = cfg.dec_embed, cfg.dec_in
        params.add(f"{prefix}.embed.w", T.init_uniform(rng, (k, d), k))
        params.add(f"{prefix}.embed.b", T.init_uniform(rng, (d,), k))
        for i in range(cfg.dec_layers):
            init_block(params, f"{prefix}.layer{i}", self.attn, cfg.dec_ff, rng)
        h = cfg.out_ffn_dim
        params.add(f"{prefix}.out1.w", T.init_uniform(rng, (d, h), d))
        params.add(f"{prefix}.out1.b", T.init_uniform(rng, (h,), d))
        params.add(f"{prefix}.out2.w", T.init_uniform(rng, (h, cfg.stress_dim), h))
        params.add(f"{prefix}.out2.b", T.init_uniform(rng, (cfg.stress_dim,), h))
        self._masks: dict[int, Tensor] = {}

    def _mask(self, n: int) -> Tensor:
        if n not in self._masks:
            self._masks[n] = mask_bias(causal_mask(n))
        return self._masks[n]

    def __call__(self, strains, ef_out) -> Tensor:
        cfg, p, pre = self.cfg, self.params, self.prefix
        E = strains if isinstance(strains, Tensor) else Tensor(strains)
        ef = ef_out if isinstance(ef_out, Tensor) else Tensor(ef_out)
        single = E.ndim == 2
        if single:
            E = E.reshape(1, *E.shape)
            ef = ef.reshape(1, *ef.shape)
        B, n, ds = E.shape
        if n < 1:
            raise InputError("strain path needs at least one step")
        if ds != cfg.strain_dim:
            raise DimensionError(f"strain width {ds} != {cfg.strain_dim}")
        if ef.shape != (B, cfg.enc_out):
            raise DimensionError(f"feature vector shape {ef.shape} != ({B}, {cfg.enc_out})")
        # EF = 1_n EF_out^T, broadcast to every step
        EF = T.matmul(Tensor(np.ones((n, 1))), ef.reshape(B, 1, cfg.enc_out))
        X = T.concat([E, EF], axis=-1)
        z = embed_with_position(X, p[f"{pre}.embed.w"], p[f"{pre}.embed.b"], self.pe)
        mask = self._mask(n)
        for i in range(cfg.dec_layers):
            z = transformer_block(z, p, f"{pre}.layer{i}", self.attn, mask)
        hidden = T.leaky_relu(T.matmul(z, p[f"{pre}.out1.w"]) + p[f"{pre}.out1.b"], cfg.leaky_slope)
        out = T.matmul(hidden, p[f"{pre}.out2.w"]) + p[f"{pre}.out2.b"]
        return out[0] if single else out


class ViTTransformer:
    """Encoder features broadcast into the causal decoder."""

    def __init__(self, cfg: ViTTransformerConfig | None = None, seed: int = 0):
        self.cfg = cfg or ViTTransformerConfig()
        self.params = ParameterSet()
        rng = np.random.default_rng(seed)
        self.encoder = ViTEncoder(self.cfg, self.params, rng)
        self.decoder = TransformerDecoder(self.cfg, self.params, rng)

    kind = "vit_transformer"

    def encode(self, image) -> Tensor:
        return self.encoder(image)

    def decode(self, strains, ef_out) -> Tensor:
        return self.decoder(strains, ef_out)

    def predict(self, image, strains) -> Tensor:
        return self.decode(strains, self.encode(image))

    def forward(self, strains, images) -> Tensor:
        return self.predict(images, strains)


class DecoderOnly:
    """The decoder fed a zero feature vector, for microstructure-free sequence data."""

    kind = "decoder"

    def __init__(self, cfg: ViTTransformerConfig | None = None, seed: int = 0):
        self.cfg = cfg or ViTTransformerConfig()
        self.params = ParameterSet()
        self.decoder = TransformerDecoder(self.cfg, self.params, np.random.default_rng(seed))

    def forward(self, strains, images=None) -> Tensor:
        E = strains if isinstance(strains, Tensor) else Tensor(strains)
        lead = E.shape[:-2]
        return self.decoder(E, np.zeros((*lead, self.cfg.enc_out)))


class GRUModel:
    """Stacked GRU (zero initial state) with a per-step linear read-out."""

    kind = "gru"

    def __init__(self, cfg: GRUConfig | None = None, seed: int = 0):
        self.cfg = cfg = cfg or GRUConfig()
        self.params = p = ParameterSet()
        rng = np.random.default_rng(seed)
        H = cfg.hidden
        for layer in range(cfg.layers):
            n_in = cfg.input if layer == 0 else H
            # gate column blocks: reset | update | candidate
            p.add(f"gru.layer{layer}.w_ih", T.init_uniform(rng, (n_in, 3 * H), n_in))
            p.add(f"gru.layer{layer}.b_ih", T.init_uniform(rng, (3 * H,), n_in))
            p.add(f"gru.layer{layer}.w_hh", T.init_uniform(rng, (H, 3 * H), H))
            p.add(f"gru.layer{layer}.b_hh", T.init_uniform(rng, (3 * H,), H))
        p.add("gru.fc.w", T.init_uniform(rng, (H, cfg.fc_out), H))
        p.add("gru.fc.b", T.init_uniform(rng, (cfg.fc_out,), H))

    def forward(self, strains, images=None) -> Tensor:
        E = strains if isinstance(strains, Tensor) else Tensor(strains)
        single = E.ndim == 2
        if single:
            E = E.reshape(1, *E.shape)
        B, n, _ = E.shape
        if n < 1:
            raise InputError("strain path needs at least one step")
        H, p = self.cfg.hidden, self.params
        xs = [E[:, t, :] for t in range(n)]
        for layer in range(self.cfg.layers):
            w_ih, b_ih = p[f"gru.layer{layer}.w_ih"], p[f"gru.layer{layer}.b_ih"]
            w_hh, b_hh = p[f"gru.layer{layer}.w_hh"], p[f"gru.layer{layer}.b_hh"]
            h = T.zeros((B, H))
            outs = []
            for x in xs:
                gi = T.matmul(x, w_ih) + b_ih
                gh = T.matmul(h, w_hh) + b_hh
                r = T.sigmoid(gi[:, :H] + gh[:, :H])
                z = T.sigmoid(gi[:, H:2 * H] + gh[:, H:2 * H])
                cand = T.tanh(gi[:, 2 * H:] + r * gh[:, 2 * H:])
                h = cand + z * (h - cand)
                outs.append(h)
            xs = outs
        seq = T.concat([h.reshape(B, 1, H) for h in xs], axis=1)
        out = T.matmul(seq, p["gru.fc.w"]) + p["gru.fc.b"]
        return out[0] if single else out

    __call__ = forward


def build_model(kind: str, cfg, seed: int = 0):
    if kind == "vit_transformer":
        return ViTTransformer(cfg, seed)
    if kind == "decoder":
        return DecoderOnly(cfg, seed)
    if kind == "gru":
        return GRUModel(cfg, seed)
    raise ConfigError(f"unknown model kind {kind!r}")
