"""The change-detection network: a weight-shared (siamese) feature subnetwork
applied to both acquisition dates, level-wise feature differencing, a
multi-branch change-feature mixer, adaptive fusion, and a softmax head.

Per date, a patch runs through a residual convolution block (RF), a multiscale
convolutional embedding feeding a transformer encoder (EF), and a transformer
decoder whose cross-attention source comes from the encoder-to-decoder skip
path (DF). The dual channel+spatial attention gate (DCCSA) sits on that skip
path: its channel stage reads the decoder-side embedding and its spatial stage
fuses the gated result with the encoder feature. Differences of RF/EF/DF
between the two dates feed the spectral-temporal change-feature learning block
(STCFL) and the adaptive feature-fusion block (AFAF); a Conv5x5 + global
average pool + two-linear softmax head scores each patch center as
changed/unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .autodiff import (
    Parameter,
    Rng,
    Tensor,
    abs_,
    clip,
    concat,
    log,
    mul,
    neg,
    reshape,
    slice_axis,
    sub,
    tmean,
    transpose,
)
from .attention import DecoderLayer, EncoderLayer, positional_encoding
from .errors import ConfigError, ShapeError
from .layers import (
    BatchNorm,
    Conv2d,
    Linear,
    Module,
    channelwise_pool,
    global_avg_pool,
    global_max_pool,
    mish,
    relu,
    sigmoid,
    softmax,
)

__all__ = [
    "ModelConfig",
    "ResidualBlock",
    "MultiscaleEmbed",
    "Dccsa",
    "Stcfl",
    "Afaf",
    "ClassifierHead",
    "ChmffnModel",
    "bce_loss",
    "BCE_EPS",
]

BCE_EPS = 1e-12
DIFF_MODES = ("signed", "absolute")


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    ``model_dim`` defaults to 3*base_channels (the three embedding branches
    concatenated); with ``use_msc`` off a single 3x3 branch is used and the
    dim collapses to base_channels. ``attention_reduction`` is the channel
    bottleneck ratio shared by the DCCSA shared-MLP and the AFAF weighting
    branch. ``ffn_hidden`` defaults to twice the model dim.
    """

    bands: int
    patch: int = 9
    base_channels: int = 32
    model_dim: Optional[int] = None
    heads: int = 4
    enc_layers: int = 1
    dec_layers: int = 1
    ffn_hidden: Optional[int] = None
    use_msc: bool = True
    use_dccsa: bool = True
    use_stcfl: bool = True
    use_afaf: bool = True
    use_causal_mask: bool = True
    diff_mode: str = "signed"
    attention_reduction: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.bands < 1:
            raise ConfigError(f"bands must be positive, got {self.bands}")
        if self.patch < 1 or self.patch % 2 == 0:
            raise ConfigError(f"patch must be odd and positive, got {self.patch}")
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be positive, got {self.base_channels}")
        expected_dim = 3 * self.base_channels if self.use_msc else self.base_channels
        if self.model_dim is None:
            self.model_dim = expected_dim
        elif self.model_dim != expected_dim:
            raise ConfigError(
                f"model_dim must be {expected_dim} for base_channels={self.base_channels} "
                f"with use_msc={self.use_msc}, got {self.model_dim}"
            )
        if self.model_dim < 2:
            raise ConfigError(f"model_dim must be >= 2, got {self.model_dim}")
        if self.model_dim % 2 != 0:
            raise ConfigError(f"model_dim must be even for the positional encoding, got {self.model_dim}")
        if self.heads < 1 or self.model_dim % self.heads != 0:
            raise ConfigError(f"heads must divide model_dim {self.model_dim}, got {self.heads}")
        if self.enc_layers < 1 or self.dec_layers < 1:
            raise ConfigError("enc_layers and dec_layers must be >= 1")
        if self.ffn_hidden is None:
            self.ffn_hidden = 2 * self.model_dim
        if self.ffn_hidden < 1:
            raise ConfigError(f"ffn_hidden must be positive, got {self.ffn_hidden}")
        if self.diff_mode not in DIFF_MODES:
            raise ConfigError(f"diff_mode must be one of {DIFF_MODES}, got {self.diff_mode!r}")
        if self.attention_reduction < 1:
            raise ConfigError(f"attention_reduction must be >= 1, got {self.attention_reduction}")
        if self.use_dccsa and self.model_dim < self.attention_reduction:
            raise ConfigError(
                f"DCCSA reduction {self.attention_reduction} exceeds channel count {self.model_dim}"
            )
        if self.use_afaf and 2 * self.model_dim < self.attention_reduction:
            raise ConfigError(
                f"AFAF reduction {self.attention_reduction} exceeds channel count {2 * self.model_dim}"
            )

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        if "bands" not in raw:
            raise ConfigError("model config requires 'bands'")
        return cls(**raw)


class ModuleList(Module):
    """Sequence of submodules registered by index for deterministic traversal."""

    def __init__(self, modules):
        super().__init__()
        self._items = list(modules)
        for i, m in enumerate(self._items):
            setattr(self, str(i), m)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)


class ConvBn(Module):
    """Convolution followed by batch normalization."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: Rng):
        super().__init__()
        self.conv = Conv2d(in_channels, out_channels, kernel_size, rng)
        self.bn = BatchNorm(out_channels)

    def forward(self, x: Tensor) -> Tensor:
        return self.bn(self.conv(x))


class ResidualBlock(Module):
    """Two 3x3 conv+BN stages with Mish, plus a 1x1 conv+BN shortcut; the sum
    passes through a final Mish. Maps (b, bands, P, P) -> (b, C, P, P)."""

    def __init__(self, in_channels: int, out_channels: int, rng: Rng):
        super().__init__()
        self.stage1 = ConvBn(in_channels, out_channels, 3, rng)
        self.stage2 = ConvBn(out_channels, out_channels, 3, rng)
        self.shortcut = ConvBn(in_channels, out_channels, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        main = self.stage2(mish(self.stage1(x)))
        return mish(main + self.shortcut(x))


class MultiscaleEmbed(Module):
    """Parallel conv+BN+Mish branches (one per kernel size), channel-concatenated
    and flattened to tokens with the sinusoidal position table added.
    (b, C, P, P) -> (b, P*P, C * n_branches)."""

    def __init__(self, channels: int, patch: int, kernel_sizes: tuple[int, ...], rng: Rng):
        super().__init__()
        self.kernel_sizes = tuple(kernel_sizes)
        self.out_dim = channels * len(self.kernel_sizes)
        self.patch = patch
        self.branches = ModuleList([ConvBn(channels, channels, k, rng) for k in self.kernel_sizes])
        self.pos = positional_encoding(patch * patch, self.out_dim)

    def forward(self, rf: Tensor) -> Tensor:
        maps = [mish(branch(rf)) for branch in self.branches]
        cat = maps[0] if len(maps) == 1 else concat(maps, axis=1)
        return map_to_tokens(cat) + self.pos


class Dccsa(Module):
    """Dual channel+spatial attention gate on the encoder-to-decoder skip path.

    Channel stage: parallel 3x3 and 5x5 convs of the decoder-side feature are
    summed, global max- and average-pooled, pushed through one shared
    conv1x1 -> Mish -> conv1x1 bottleneck, summed, and sigmoided into per-channel
    weights that gate the *input* feature. Spatial stage: channelwise max/mean
    planes of the gated feature drive parallel 3x3 and 5x5 convs whose sigmoid
    sum gates it per pixel; the result is concatenated with the encoder skip
    feature and fused back to ``channels`` by a 3x3 conv.
    """

    def __init__(self, channels: int, reduction: int, rng: Rng):
        super().__init__()
        if channels < reduction:
            raise ConfigError(f"DCCSA reduction {reduction} exceeds channel count {channels}")
        hidden = channels // reduction
        self.conv3 = Conv2d(channels, channels, 3, rng)
        self.conv5 = Conv2d(channels, channels, 5, rng)
        self.mlp_in = Conv2d(channels, hidden, 1, rng)
        self.mlp_out = Conv2d(hidden, channels, 1, rng)
        self.spatial3 = Conv2d(2, 1, 3, rng)
        self.spatial5 = Conv2d(2, 1, 5, rng)
        self.fuse = Conv2d(2 * channels, channels, 3, rng)

    def _shared_mlp(self, pooled: Tensor) -> Tensor:
        return self.mlp_out(mish(self.mlp_in(pooled)))

    def channel_gate(self, f: Tensor) -> Tensor:
        f_conv = self.conv3(f) + self.conv5(f)
        w = self._shared_mlp(global_max_pool(f_conv)) + self._shared_mlp(global_avg_pool(f_conv))
        return mul(f, sigmoid(w))

    def spatial_fuse(self, f_c: Tensor, skip: Tensor) -> Tensor:
        pooled = channelwise_pool(f_c)
        gate = sigmoid(self.spatial3(pooled) + self.spatial5(pooled))
        return self.fuse(concat([skip, mul(f_c, gate)], axis=1))

    def forward(self, f_dec: Tensor, skip: Tensor) -> Tensor:
        return self.spatial_fuse(self.channel_gate(f_dec), skip)


class Stcfl(Module):
    """Spectral-temporal change-feature learning over the three level-wise
    difference maps (each (b, c, h, w)).

    Pairwise 1x1 conv+BN sums build cross-level maps X1 (levels 1+2) and X2
    (levels 2+3); O2 is their channel concat (2c). O1 adds a 1x1 conv+BN of
    level 1, a ReLU'd 3x3 conv+BN of X2, and a shared 1x1 projection of O2
    back to c channels; O3 mirrors it from the other end.
    """

    def __init__(self, channels: int, rng: Rng):
        super().__init__()
        c = channels
        self.x1_from_f1 = ConvBn(c, c, 1, rng)
        self.x1_from_f2 = ConvBn(c, c, 1, rng)
        self.x2_from_f2 = ConvBn(c, c, 1, rng)
        self.x2_from_f3 = ConvBn(c, c, 1, rng)
        self.o1_direct = ConvBn(c, c, 1, rng)
        self.o1_wide = ConvBn(c, c, 3, rng)
        self.o3_wide = ConvBn(c, c, 3, rng)
        self.o3_direct = ConvBn(c, c, 1, rng)
        self.proj = Conv2d(2 * c, c, 1, rng)

    def forward(self, f1: Tensor, f2: Tensor, f3: Tensor):
        x1 = self.x1_from_f1(f1) + self.x1_from_f2(f2)
        x2 = self.x2_from_f2(f2) + self.x2_from_f3(f3)
        o2 = concat([x1, x2], axis=1)
        p = self.proj(o2)
        o1 = self.o1_direct(f1) + relu(self.o1_wide(x2)) + p
        o3 = relu(self.o3_wide(x1)) + self.o3_direct(f3) + p
        return o1, o2, o3


class Afaf(Module):
    """Adaptive fusion of the mixer outputs (c, 2c, c channels).

    The side inputs expand to 2c via 3x3 convs; their sum with the middle input
    is globally average-pooled and squeezed through conv1x1 -> BN -> ReLU ->
    conv1x1 -> sigmoid into one per-channel weight vector W (b, 2c, 1, 1) that
    gates all three terms before the final channel concat to 6c.
    """

    def __init__(self, channels: int, reduction: int, rng: Rng):
        super().__init__()
        two_c = 2 * channels
        if two_c < reduction:
            raise ConfigError(f"AFAF reduction {reduction} exceeds channel count {two_c}")
        hidden = two_c // reduction
        self.expand1 = Conv2d(channels, two_c, 3, rng)
        self.expand3 = Conv2d(channels, two_c, 3, rng)
        self.squeeze = Conv2d(two_c, hidden, 1, rng)
        self.squeeze_bn = BatchNorm(hidden)
        self.excite = Conv2d(hidden, two_c, 1, rng)

    def forward(self, o1: Tensor, o2: Tensor, o3: Tensor) -> Tensor:
        a = self.expand1(o1)
        b = self.expand3(o3)
        fused = a + o2 + b
        w = sigmoid(self.excite(relu(self.squeeze_bn(self.squeeze(global_avg_pool(fused))))))
        return concat([mul(a, w), mul(o2, w), mul(b, w)], axis=1)


class ClassifierHead(Module):
    """Conv5x5 -> global average pool -> Linear+ReLU -> Linear -> softmax,
    yielding (b, 2) class probabilities (column 1 = changed)."""

    def __init__(self, in_channels: int, channels: int, rng: Rng):
        super().__init__()
        hidden = max(1, channels // 2)
        self.conv = Conv2d(in_channels, channels, 5, rng)
        self.fc1 = Linear(channels, hidden, rng)
        self.fc2 = Linear(hidden, 2, rng)

    def forward(self, fused: Tensor) -> Tensor:
        pooled = global_avg_pool(self.conv(fused))
        flat = reshape(pooled, (pooled.shape[0], pooled.shape[1]))
        return softmax(self.fc2(relu(self.fc1(flat))), axis=-1)


def map_to_tokens(x: Tensor) -> Tensor:
    """(b, c, h, w) -> (b, h*w, c), spatial positions flattened row-major."""
    b, c, h, w = x.shape
    return reshape(transpose(x, (0, 2, 3, 1)), (b, h * w, c))


def tokens_to_map(x: Tensor, h: int, w: int) -> Tensor:
    """(b, h*w, c) -> (b, c, h, w), inverse of map_to_tokens."""
    b, s, c = x.shape
    if s != h * w:
        raise ShapeError(f"token count {s} does not match {h}x{w}")
    return transpose(reshape(x, (b, h, w, c)), (0, 3, 1, 2))


class ChmffnModel(Module):
    """Full siamese network; both dates share every subnetwork weight."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        rng = Rng(config.seed)
        c, d, p = config.base_channels, config.model_dim, config.patch
        kernels = (3, 5, 7) if config.use_msc else (3,)
        self.residual = ResidualBlock(config.bands, c, rng)
        self.embed = MultiscaleEmbed(c, p, kernels, rng)
        self.encoders = ModuleList(
            [EncoderLayer(d, config.heads, config.ffn_hidden, rng) for _ in range(config.enc_layers)]
        )
        self.dec_embed = Conv2d(c, d, 1, rng)
        self.dccsa = Dccsa(d, config.attention_reduction, rng) if config.use_dccsa else None
        self.decoders = ModuleList(
            [
                DecoderLayer(d, config.heads, config.ffn_hidden, rng, causal=config.use_causal_mask)
                for _ in range(config.dec_layers)
            ]
        )
        # bias-free so a swapped input pair exactly negates the projected diff
        self.proj_rf = Conv2d(c, d, 1, rng, bias=False)
        self.stcfl = Stcfl(d, rng) if config.use_stcfl else None
        self.afaf = Afaf(d, config.attention_reduction, rng) if config.use_afaf else None
        head_in = 6 * d if config.use_afaf else 4 * d
        self.head = ClassifierHead(head_in, d, rng)
        self.pos = positional_encoding(p * p, d)

    def subnetwork_forward(self, x: Tensor):
        """One date through the shared feature extractor.

        Returns (RF, EF, DF): the residual feature (b, C, P, P), the encoder
        feature, and the decoder feature (both (b, d, P, P)).
        """
        cfg = self.config
        if x.ndim != 4 or x.shape[1] != cfg.bands or x.shape[2] != cfg.patch or x.shape[3] != cfg.patch:
            raise ShapeError(
                f"expected (b,{cfg.bands},{cfg.patch},{cfg.patch}) patches, got {x.shape}"
            )
        p = cfg.patch
        rf = self.residual(x)
        tokens = self.embed(rf)
        for enc in self.encoders:
            tokens = enc(tokens)
        ef_map = tokens_to_map(tokens, p, p)
        dec_map = self.dec_embed(rf)
        dec_tokens = map_to_tokens(dec_map) + self.pos
        if self.dccsa is not None:
            cross = map_to_tokens(self.dccsa(dec_map, ef_map))
        else:
            cross = tokens
        out = dec_tokens
        for dec in self.decoders:
            out = dec(out, cross)
        df_map = tokens_to_map(out, p, p)
        return rf, ef_map, df_map

    def _diff(self, late: Tensor, early: Tensor) -> Tensor:
        delta = sub(late, early)
        return abs_(delta) if self.config.diff_mode == "absolute" else delta

    def change_features(self, p1: Tensor, p2: Tensor):
        """Level-wise bi-temporal differences (F1, F2, F3), each (b, d, P, P)."""
        rf1, ef1, df1 = self.subnetwork_forward(p1)
        rf2, ef2, df2 = self.subnetwork_forward(p2)
        f1 = self.proj_rf(self._diff(rf2, rf1))
        f2 = self._diff(ef2, ef1)
        f3 = self._diff(df2, df1)
        return f1, f2, f3

    def forward_pair(self, p1: Tensor, p2: Tensor) -> Tensor:
        """Score a batch of co-located patch pairs; returns (b, 2) probabilities."""
        f1, f2, f3 = self.change_features(p1, p2)
        if self.stcfl is not None:
            o1, o2, o3 = self.stcfl(f1, f2, f3)
        else:
            o1, o2, o3 = f1, concat([f1, f2], axis=1), f3
        if self.afaf is not None:
            fused = self.afaf(o1, o2, o3)
        else:
            fused = concat([o1, o2, o3], axis=1)
        return self.head(fused)

    def forward(self, p1: Tensor, p2: Tensor) -> Tensor:
        return self.forward_pair(p1, p2)


def bce_loss(probs: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy of the 'changed' probability column against
    0/1 labels; probabilities are clamped to [1e-12, 1 - 1e-12] before the log."""
    if probs.ndim != 2 or probs.shape[1] != 2:
        raise ShapeError(f"bce_loss expects (b,2) probabilities, got {probs.shape}")
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if y.shape[0] != probs.shape[0]:
        raise ShapeError(f"label count {y.shape[0]} does not match batch {probs.shape[0]}")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be 0 or 1")
    p = clip(slice_axis(probs, 1, 1, 2), BCE_EPS, 1.0 - BCE_EPS)
    yt = Tensor(y.reshape(-1, 1))
    yt_inv = Tensor((1.0 - y).reshape(-1, 1))
    terms = mul(yt, log(p)) + mul(yt_inv, log(sub(Tensor(np.float64(1.0)), p)))
    return neg(tmean(terms))
