"""Image encoder: patchify, linear projection, and a small pre-LN
transformer stack producing one CLS embedding plus M patch embeddings.

The depth=0 path is analytically checkable: with freshly initialized
(zero) positional embeddings the patch outputs are exactly
``patches @ W_proj + b`` and the CLS output is the learnable CLS
embedding itself.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError
from .numerics import (
    Tensor,
    as_tensor,
    make_generator,
    parameter,
    softplus_inverse,
    truncated_normal,
)
from .numerics import tensor as T
from .numerics.rng import STREAM_INIT

MLP_RATIO = 4
LN_EPS = 1e-5
INIT_STD = 0.02


@dataclass(frozen=True)
class EncoderConfig:
    """Geometry and size of the encoder; defaults are the toy scale."""

    image_height: int = 32
    image_width: int = 32
    channels: int = 3
    patch_size: int = 8
    embed_dim: int = 64
    depth: int = 2
    heads: int = 4
    seed: int = 0

    def __post_init__(self):
        p = self.patch_size
        if p <= 0 or self.image_height % p or self.image_width % p:
            raise ConfigError(
                f"image {self.image_height}x{self.image_width} not divisible by "
                f"patch size {p}"
            )
        if self.num_patches < 1:
            raise ConfigError("encoder needs at least one patch")
        if self.heads < 1 or self.embed_dim % self.heads:
            raise ConfigError(
                f"embed_dim {self.embed_dim} not divisible by heads {self.heads}"
            )
        if self.depth < 0:
            raise ConfigError("depth must be >= 0")
        if self.channels < 1:
            raise ConfigError("channels must be >= 1")

    @property
    def num_patches(self) -> int:
        return (self.image_height // self.patch_size) * (
            self.image_width // self.patch_size
        )

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    def to_dict(self) -> dict:
        return {
            "image_height": self.image_height,
            "image_width": self.image_width,
            "channels": self.channels,
            "patch_size": self.patch_size,
            "embed_dim": self.embed_dim,
            "depth": self.depth,
            "heads": self.heads,
            "seed": self.seed,
        }


@dataclass
class ModelState:
    """One encoder's full parameter set, temperature included."""

    config: EncoderConfig
    params: dict[str, Tensor] = field(default_factory=dict)

    def temperature(self) -> Tensor:
        """Positive similarity temperature, tau = softplus(raw)."""
        return T.softplus(self.params["temperature_raw"])

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self, requires_grad: bool | None = None) -> "ModelState":
        params = {}
        for name, p in self.params.items():
            rg = p.requires_grad if requires_grad is None else requires_grad
            params[name] = Tensor(p.data.copy(), requires_grad=rg)
        return ModelState(self.config, params)

    def astype(self, dtype) -> "ModelState":
        return ModelState(
            self.config,
            {
                name: Tensor(p.data.astype(dtype), requires_grad=p.requires_grad)
                for name, p in self.params.items()
            },
        )

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name in sorted(self.params):
            digest.update(name.encode())
            digest.update(self.params[name].data.tobytes())
        return digest.hexdigest()

    def all_finite(self) -> bool:
        return all(p.is_finite() for p in self.params.values())


@dataclass
class EncodedImage:
    """CLS embedding plus the M patch embeddings of one image."""

    cls: Tensor
    patches: Tensor
    image_id: int


def expected_param_count(config: EncoderConfig) -> int:
    """Exact parameter count:

    patch_dim*D + D (projection) + D (CLS) + M*D (positions)
    + depth * (12*D^2 + 13*D) (per block: 2 layer norms, QKVO, 4x MLP)
    + 1 (temperature).
    """
    d = config.embed_dim
    per_block = 12 * d * d + 13 * d
    return (
        config.patch_dim * d
        + d
        + d
        + config.num_patches * d
        + config.depth * per_block
        + 1
    )


def init_state(config: EncoderConfig, tau_init: float = 1.0) -> ModelState:
    """Fresh parameters: truncated-normal(std 0.02) projections and CLS,
    zero biases and positions, unit layer-norm gains, tau = tau_init.

    Parameter creation order is fixed, so a seed fully determines every
    weight.
    """
    gen = make_generator(config.seed, STREAM_INIT)
    d = config.embed_dim
    params: dict[str, Tensor] = {}

    def tn(shape):
        return parameter(truncated_normal(gen, shape, std=INIT_STD))

    def zeros(shape):
        return parameter(np.zeros(shape, dtype=np.float32))

    params["patch_proj.weight"] = tn((config.patch_dim, d))
    params["patch_proj.bias"] = zeros((d,))
    params["cls_token"] = tn((d,))
    params["pos_embed"] = zeros((config.num_patches, d))
    for i in range(config.depth):
        prefix = f"blocks.{i}."
        params[prefix + "ln1.gamma"] = parameter(np.ones(d, dtype=np.float32))
        params[prefix + "ln1.beta"] = zeros((d,))
        for name in ("q", "k", "v", "o"):
            params[prefix + f"attn.{name}.weight"] = tn((d, d))
            params[prefix + f"attn.{name}.bias"] = zeros((d,))
        params[prefix + "ln2.gamma"] = parameter(np.ones(d, dtype=np.float32))
        params[prefix + "ln2.beta"] = zeros((d,))
        params[prefix + "mlp.w1"] = tn((d, MLP_RATIO * d))
        params[prefix + "mlp.b1"] = zeros((MLP_RATIO * d,))
        params[prefix + "mlp.w2"] = tn((MLP_RATIO * d, d))
        params[prefix + "mlp.b2"] = zeros((d,))
    params["temperature_raw"] = parameter(
        np.asarray(softplus_inverse(tau_init), dtype=np.float32)
    )
    return ModelState(config, params)


def patchify(image: np.ndarray, patch_size: int) -> np.ndarray:
    """Split an HxWxC image into rows of row-major flattened patches.

    Patch i is the i-th patch in row-major order over the patch grid;
    its row is the row-major flattening of the p x p x C block.
    """
    image = np.asarray(image)
    if image.ndim != 3:
        raise ConfigError(f"patchify expects an HxWxC image, got shape {image.shape}")
    h, w, c = image.shape
    if patch_size <= 0 or h % patch_size or w % patch_size:
        raise ConfigError(
            f"image {h}x{w} not divisible by patch size {patch_size}"
        )
    return _patchify_batch(image[None], patch_size)[0]


def _patchify_batch(images: np.ndarray, patch_size: int) -> np.ndarray:
    b, h, w, c = images.shape
    gh, gw = h // patch_size, w // patch_size
    x = images.reshape(b, gh, patch_size, gw, patch_size, c)
    x = x.transpose(0, 1, 3, 2, 4, 5)
    return np.ascontiguousarray(x.reshape(b, gh * gw, patch_size * patch_size * c))


def _layer_norm(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = (var + LN_EPS) ** -0.5
    return centered * inv * gamma + beta


def _attention(x: Tensor, params: dict[str, Tensor], prefix: str, heads: int) -> Tensor:
    b, t, d = x.shape
    dh = d // heads

    def project(name):
        return x @ params[prefix + f"attn.{name}.weight"] + params[
            prefix + f"attn.{name}.bias"
        ]

    def split(tn):
        return T.transpose(T.reshape(tn, (b, t, heads, dh)), (0, 2, 1, 3))

    q, k, v = split(project("q")), split(project("k")), split(project("v"))
    scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dh))
    attn = T.softmax(scores, axis=-1)
    out = T.transpose(T.matmul(attn, v), (0, 2, 1, 3))
    merged = T.reshape(out, (b, t, d))
    return merged @ params[prefix + "attn.o.weight"] + params[prefix + "attn.o.bias"]


def encode_batch(images: np.ndarray, state: ModelState) -> tuple[Tensor, Tensor]:
    """Encode a (B, H, W, C) stack; returns (CLS (B, D), patches (B, M, D))."""
    cfg = state.config
    images = np.asarray(images)
    if images.ndim != 4 or images.shape[1:] != (
        cfg.image_height,
        cfg.image_width,
        cfg.channels,
    ):
        raise ConfigError(
            f"image batch shape {images.shape} does not match config "
            f"(B, {cfg.image_height}, {cfg.image_width}, {cfg.channels})"
        )
    p = state.params
    dtype = p["patch_proj.weight"].dtype
    flat = as_tensor(
        _patchify_batch(images.astype(dtype, copy=False), cfg.patch_size), dtype=dtype
    )
    tokens = flat @ p["patch_proj.weight"] + p["patch_proj.bias"]
    tokens = tokens + p["pos_embed"]

    b = images.shape[0]
    anchor = as_tensor(np.zeros((b, 1, cfg.embed_dim), dtype=dtype))
    cls_tokens = anchor + T.reshape(p["cls_token"], (1, 1, cfg.embed_dim))
    seq = T.concat([cls_tokens, tokens], axis=1)

    for i in range(cfg.depth):
        prefix = f"blocks.{i}."
        normed = _layer_norm(seq, p[prefix + "ln1.gamma"], p[prefix + "ln1.beta"])
        seq = seq + _attention(normed, p, prefix, cfg.heads)
        normed = _layer_norm(seq, p[prefix + "ln2.gamma"], p[prefix + "ln2.beta"])
        hidden = T.gelu(normed @ p[prefix + "mlp.w1"] + p[prefix + "mlp.b1"])
        seq = seq + (hidden @ p[prefix + "mlp.w2"] + p[prefix + "mlp.b2"])

    if not seq.is_finite():
        raise NumericalError(
            "encoder produced non-finite embeddings; check inputs and parameters"
        )
    return seq[:, 0, :], seq[:, 1:, :]


def encode(image: np.ndarray, state: ModelState, image_id: int = 0) -> EncodedImage:
    """Encode a single image into its CLS and patch embeddings."""
    cls, patches = encode_batch(np.asarray(image)[None], state)
    return EncodedImage(cls=cls[0], patches=patches[0], image_id=image_id)
