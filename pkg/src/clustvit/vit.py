"""Plain ViT encoder: tokenizer, positional embedding, CLS token, pre-norm
Transformer blocks, and a linear per-token segmentation head with bilinear
upsampling.

The encoder is exposed as two half-encoders (prefix/suffix) around an
injection point so a token-merging module can shorten the sequence mid
network. The suffix is length-agnostic: it never consults the patch grid
or positional information.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .optim import make_param
from .tensor import Tensor


class ConfigError(ValueError):
    pass


@dataclass
class EncoderConfig:
    image_size: tuple = (64, 64)
    patch_size: int = 8
    embed_dim: int = 96
    num_layers: int = 8
    num_heads: int = 4
    ffn_hidden: int = 0          # 0 -> 4 * embed_dim
    num_classes: int = 3
    clusters: int = 3            # k; 0 disables token merging entirely
    injection_point: int = 4
    cluster_hidden: int = 0      # 0 -> round(4.03 * embed_dim)
    refine_skip: bool = False
    scale_tag: str = "tiny-desk"

    def __post_init__(self):
        h, w = self.image_size
        p = self.patch_size
        if h % p or w % p:
            raise ConfigError(f"image size {self.image_size} not divisible by patch size {p}")
        if self.embed_dim % self.num_heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by {self.num_heads} heads")
        if not 1 <= self.injection_point <= self.num_layers:
            raise ConfigError(
                f"injection_point {self.injection_point} outside [1, {self.num_layers}]")
        if self.clusters < 0:
            raise ConfigError(f"clusters must be >= 0, got {self.clusters}")
        if self.ffn_hidden == 0:
            self.ffn_hidden = 4 * self.embed_dim
        if self.cluster_hidden == 0:
            self.cluster_hidden = round(4.03 * self.embed_dim)

    @property
    def grid(self):
        return (self.image_size[0] // self.patch_size, self.image_size[1] // self.patch_size)

    @property
    def num_patches(self):
        r, c = self.grid
        return r * c


# Full-scale presets are for FLOPs modeling only; tiny-desk is trainable
# on a single core in minutes.
PRESETS = {
    "tiny-desk": dict(image_size=(64, 64), patch_size=8, embed_dim=96, num_layers=8,
                      num_heads=4, scale_tag="tiny-desk"),
    "tiny": dict(image_size=(640, 640), patch_size=16, embed_dim=192, num_layers=12,
                 num_heads=3, cluster_hidden=774, scale_tag="tiny"),
    "small": dict(image_size=(640, 640), patch_size=16, embed_dim=384, num_layers=12,
                  num_heads=6, cluster_hidden=1548, scale_tag="small"),
    "base": dict(image_size=(640, 640), patch_size=16, embed_dim=768, num_layers=12,
                 num_heads=12, cluster_hidden=3096, scale_tag="base"),
    "large": dict(image_size=(640, 640), patch_size=16, embed_dim=1024, num_layers=24,
                  num_heads=16, cluster_hidden=4128, scale_tag="large"),
}


def preset_config(name, **overrides):
    if name not in PRESETS:
        raise ConfigError(f"unknown model preset {name!r}; choose from {sorted(PRESETS)}")
    kw = dict(PRESETS[name])
    kw.update(overrides)
    return EncoderConfig(**kw)


@dataclass
class TokenSequence:
    """(1+N) x D token matrix with CLS at row 0, plus the patch grid."""

    tokens: Tensor
    grid: tuple

    def __len__(self):
        return self.tokens.data.shape[0]


def extract_patches(image, patch_size):
    """Flatten non-overlapping P x P x 3 patches in row-major patch order."""
    image = np.asarray(image, dtype=np.float64)
    h, w, c = image.shape
    p = patch_size
    if h % p or w % p:
        raise ConfigError(f"image {h}x{w} not divisible by patch size {p}")
    rows, cols = h // p, w // p
    patches = image.reshape(rows, p, cols, p, c).transpose(0, 2, 1, 3, 4)
    return patches.reshape(rows * cols, p * p * c)


_BILINEAR_CACHE = {}


def _axis_weights(out_size, in_size):
    """1-D bilinear weights, no corner alignment: output sample i reads the
    source coordinate (i + 0.5) / scale - 0.5, clamped to the grid."""
    scale = out_size / in_size
    src = (np.arange(out_size) + 0.5) / scale - 0.5
    src = np.clip(src, 0.0, in_size - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i0 = np.minimum(i0, in_size - 1)
    i1 = np.minimum(i0 + 1, in_size - 1)
    frac = src - i0
    m = np.zeros((out_size, in_size))
    m[np.arange(out_size), i0] += 1.0 - frac
    m[np.arange(out_size), i1] += frac
    return m


def bilinear_matrix(grid, patch_size):
    """Dense stencil mapping a (rows*cols) grid to (rows*cols*P*P) pixels."""
    rows, cols = grid
    key = (rows, cols, patch_size)
    if key not in _BILINEAR_CACHE:
        my = _axis_weights(rows * patch_size, rows)
        mx = _axis_weights(cols * patch_size, cols)
        _BILINEAR_CACHE[key] = np.kron(my, mx)
    return _BILINEAR_CACHE[key]


class Encoder:
    """ViT encoder with learned patch projection, positional embeddings,
    CLS token, and pre-norm MHSA/FFN blocks."""

    def __init__(self, config, rng, params=None):
        self.config = config
        self.params = params if params is not None else []
        d = config.embed_dim
        n = config.num_patches
        f = config.ffn_hidden
        patch_dim = config.patch_size * config.patch_size * 3
        mk = lambda name, shape, **kw: make_param(self.params, rng, name, shape, **kw)
        self.w_patch = mk("embed.proj.weight", (patch_dim, d))
        self.b_patch = mk("embed.proj.bias", (d,), zero=True)
        self.pos = mk("embed.pos", (n, d), fan_in=1, fan_out=d)
        self.cls = mk("embed.cls", (1, d), fan_in=1, fan_out=d)
        self.blocks = []
        for i in range(config.num_layers):
            blk = {
                "ln1_g": mk(f"block{i}.ln1.gain", (d,), zero=True),
                "ln1_b": mk(f"block{i}.ln1.bias", (d,), zero=True),
                "wq": mk(f"block{i}.attn.wq", (d, d)),
                "wk": mk(f"block{i}.attn.wk", (d, d)),
                "wv": mk(f"block{i}.attn.wv", (d, d)),
                "wo": mk(f"block{i}.attn.wo", (d, d)),
                "bq": mk(f"block{i}.attn.bq", (d,), zero=True),
                "bk": mk(f"block{i}.attn.bk", (d,), zero=True),
                "bv": mk(f"block{i}.attn.bv", (d,), zero=True),
                "bo": mk(f"block{i}.attn.bo", (d,), zero=True),
                "ln2_g": mk(f"block{i}.ln2.gain", (d,), zero=True),
                "ln2_b": mk(f"block{i}.ln2.bias", (d,), zero=True),
                "w1": mk(f"block{i}.ffn.w1", (d, f)),
                "b1": mk(f"block{i}.ffn.b1", (f,), zero=True),
                "w2": mk(f"block{i}.ffn.w2", (f, d)),
                "b2": mk(f"block{i}.ffn.b2", (d,), zero=True),
            }
            blk["ln1_g"].data[:] = 1.0
            blk["ln2_g"].data[:] = 1.0
            self.blocks.append(blk)
        self.w_head = mk("head.weight", (d, config.num_classes))
        self.b_head = mk("head.bias", (config.num_classes,), zero=True)

    # -- tokenizer -------------------------------------------------------
    def patchify_embed(self, image):
        image = np.asarray(image, dtype=np.float64)
        if image.shape != (*self.config.image_size, 3):
            raise ConfigError(
                f"image shape {image.shape} does not match config "
                f"{(*self.config.image_size, 3)}")
        patches = Tensor(extract_patches(image, self.config.patch_size))
        tokens = T.matmul(patches, self.w_patch) + self.b_patch + self.pos
        tokens = T.concat_rows([self.cls, tokens])
        return TokenSequence(tokens, self.config.grid)

    # -- transformer blocks ----------------------------------------------
    def _mhsa(self, x, blk):
        d = self.config.embed_dim
        h = self.config.num_heads
        dh = d // h
        q = T.matmul(x, blk["wq"]) + blk["bq"]
        k = T.matmul(x, blk["wk"]) + blk["bk"]
        v = T.matmul(x, blk["wv"]) + blk["bv"]
        heads = []
        inv = 1.0 / np.sqrt(dh)
        for i in range(h):
            qh = T.slice_cols(q, i * dh, (i + 1) * dh)
            kh = T.slice_cols(k, i * dh, (i + 1) * dh)
            vh = T.slice_cols(v, i * dh, (i + 1) * dh)
            scores = T.mul(T.matmul(qh, T.transpose(kh)), inv)
            attn = T.softmax(scores, axis=-1)
            heads.append(T.matmul(attn, vh))
        out = heads[0] if h == 1 else T.concat_cols(heads)
        return T.matmul(out, blk["wo"]) + blk["bo"]

    def _ffn(self, x, blk):
        hidden = T.gelu(T.matmul(x, blk["w1"]) + blk["b1"])
        return T.matmul(hidden, blk["w2"]) + blk["b2"]

    def transformer_block(self, seq, layer_index):
        blk = self.blocks[layer_index]
        x = seq.tokens
        x = self._mhsa(T.layer_norm(x, blk["ln1_g"], blk["ln1_b"]), blk) + x
        x = self._ffn(T.layer_norm(x, blk["ln2_g"], blk["ln2_b"]), blk) + x
        return TokenSequence(x, seq.grid)

    def encode_prefix(self, seq):
        for i in range(self.config.injection_point):
            seq = self.transformer_block(seq, i)
        return seq

    def encode_suffix(self, seq):
        for i in range(self.config.injection_point, self.config.num_layers):
            seq = self.transformer_block(seq, i)
        return seq

    def encode_all(self, seq):
        for i in range(self.config.num_layers):
            seq = self.transformer_block(seq, i)
        return seq

    # -- segmentation head -----------------------------------------------
    def seg_head(self, seq):
        """Per-token class logits, bilinearly upsampled to pixel resolution.

        Returns a (H*W) x C tensor in row-major pixel order.
        """
        n = self.config.num_patches
        if len(seq) != 1 + n:
            raise ValueError(
                f"regenerate first: head needs {1 + n} tokens, got {len(seq)}")
        patch_tokens = T.gather_rows(seq.tokens, np.arange(1, 1 + n))
        logits = T.matmul(patch_tokens, self.w_head) + self.b_head
        stencil = bilinear_matrix(seq.grid, self.config.patch_size)
        return T.linear_map(stencil, logits)


def logits_to_image(logits, image_size, num_classes):
    """Reshape flat pixel logits into H x W x C."""
    h, w = image_size
    return logits.data.reshape(h, w, num_classes)
