"""Multimodal landing-marker detector: three convolutional stems feeding a
token sequence through a transformer encoder into objectness / box heads.

Forward inference only. The pipeline for a (3, 160, 160) input is

    plane (1,160,160) --stem--> (128, 20, 20)            [x3 modalities]
    concat + flatten  --------> (400, 384) tokens
    class token + positional -> (401, 384)
    encoder (6 pre-norm layers) -> (401, 384)
    class-token row -> MLP heads -> objectness, box corners

Dropout exists in the configuration for checkpoint fidelity but is never
applied at inference.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ContractViolation, NumericFault
from .losses import BBox
from .nncore import (
    Activation,
    AttentionParams,
    batchnorm_inference,
    conv2d_forward,
    dense_forward,
    DenseLayer,
    gelu,
    layernorm,
    maxpool2_forward,
    multihead_attention,
)
from .rng import Rng

IMAGE_SIZE = 160
MODALITIES = ("visual", "thermal", "lidar")


@dataclass(frozen=True)
class VitalConfig:
    """Architecture hyperparameters; defaults are the deployed geometry."""

    embed_dim: int = 128  # channels produced by each stem
    patch_side: int = 20
    encoder_layers: int = 6
    ffn_hidden: int = 512
    heads: int = 6
    dropout: float = 0.2  # recorded in checkpoints; inactive at inference
    image_size: int = IMAGE_SIZE
    stem_channels: tuple[int, int, int] = (8, 16, 32)

    @property
    def token_dim(self) -> int:
        return 3 * self.embed_dim

    @property
    def token_count(self) -> int:
        return self.patch_side * self.patch_side + 1

    def validate(self) -> None:
        if self.patch_side != self.image_size // 8:
            raise ContractViolation("patch side must equal image_size / 2^3 (three poolings)")
        if self.token_dim % self.heads != 0:
            raise ContractViolation(
                f"token dim {self.token_dim} not divisible by {self.heads} heads"
            )
        if len(self.stem_channels) != 3 or any(c <= 0 for c in self.stem_channels):
            raise ContractViolation("stem_channels must be three positive widths")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractViolation("dropout must lie in [0,1)")


@dataclass
class MultimodalImage:
    """Three aligned grayscale planes (visual, thermal, lidar) in [0,1]."""

    planes: np.ndarray  # (3, 160, 160) float32

    def __post_init__(self) -> None:
        self.planes = np.asarray(self.planes, dtype=np.float32)
        if self.planes.shape != (3, IMAGE_SIZE, IMAGE_SIZE):
            raise ContractViolation(
                f"expected (3,{IMAGE_SIZE},{IMAGE_SIZE}) planes, got {self.planes.shape}"
            )
        if not np.isfinite(self.planes).all():
            raise ContractViolation("image planes must be finite")
        if self.planes.min() < 0.0 or self.planes.max() > 1.0:
            raise ContractViolation("image values must lie in [0,1]")

    @classmethod
    def from_planes(cls, visual, thermal, lidar) -> "MultimodalImage":
        return cls(np.stack([visual, thermal, lidar]).astype(np.float32))

    @property
    def visual(self) -> np.ndarray:
        return self.planes[0]

    @property
    def thermal(self) -> np.ndarray:
        return self.planes[1]

    @property
    def lidar(self) -> np.ndarray:
        return self.planes[2]

    def copy(self) -> "MultimodalImage":
        return MultimodalImage(self.planes.copy())


@dataclass(frozen=True)
class Detection:
    """Detector output: marker probability and a normalized corner box."""

    objectness: float
    bbox: BBox

    def __post_init__(self) -> None:
        if not 0.0 <= self.objectness <= 1.0:
            raise ContractViolation("objectness must lie in [0,1]")


@dataclass
class ConvParams:
    kernels: np.ndarray  # (Cout, Cin, k, k)
    bias: np.ndarray  # (Cout,)


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray


@dataclass
class StemBlock:
    """conv-BN-ReLU-conv-BN main path with a 1x1 conv residual, then pool."""

    conv1: ConvParams
    bn1: BatchNormParams
    conv2: ConvParams
    bn2: BatchNormParams
    residual: ConvParams  # 1x1, maps block input channels to block output


@dataclass
class StemWeights:
    blocks: list[StemBlock]
    final_conv: ConvParams  # 3x3, pad 1, emits embed_dim channels


@dataclass
class LayerNormParams:
    gamma: np.ndarray
    beta: np.ndarray


@dataclass
class EncoderLayerWeights:
    ln_attn: LayerNormParams
    attention: AttentionParams
    ln_ffn: LayerNormParams
    ffn_in: DenseLayer  # token_dim -> ffn_hidden, GELU applied separately
    ffn_out: DenseLayer  # ffn_hidden -> token_dim


@dataclass
class HeadWeights:
    ln_in: LayerNormParams
    hidden: DenseLayer  # token_dim -> token_dim, GELU
    ln_hidden: LayerNormParams
    out: DenseLayer  # token_dim -> 1 (objectness) or 4 (box corners)


@dataclass
class VitalWeights:
    config: VitalConfig
    stems: dict  # modality name -> StemWeights
    class_token: np.ndarray  # (1, token_dim)
    positional: np.ndarray  # (token_count, token_dim)
    encoder: list[EncoderLayerWeights] = field(default_factory=list)
    head_objectness: Optional[HeadWeights] = None
    head_box: Optional[HeadWeights] = None


def _init_conv(rng: Rng, c_out: int, c_in: int, k: int) -> ConvParams:
    fan_in = c_in * k * k
    std = np.sqrt(2.0 / fan_in)
    kernels = rng.normal(size=(c_out, c_in, k, k), std=std).astype(np.float32)
    return ConvParams(kernels, np.zeros(c_out, dtype=np.float32))


def _init_bn(c: int) -> BatchNormParams:
    return BatchNormParams(
        gamma=np.ones(c, dtype=np.float32),
        beta=np.zeros(c, dtype=np.float32),
        mean=np.zeros(c, dtype=np.float32),
        var=np.ones(c, dtype=np.float32),
    )


def _init_linear(rng: Rng, out_dim: int, in_dim: int, activation=Activation.IDENTITY) -> DenseLayer:
    w = rng.truncated_normal((out_dim, in_dim), std=0.02).astype(np.float32)
    return DenseLayer(w, np.zeros(out_dim, dtype=np.float32), activation)


def _init_ln(dim: int) -> LayerNormParams:
    return LayerNormParams(np.ones(dim, dtype=np.float32), np.zeros(dim, dtype=np.float32))


def init_weights(config: VitalConfig, seed: int) -> VitalWeights:
    """Deterministic random weights: truncated normal (std 0.02) for
    embeddings and projections, fan-in-scaled normals for convolutions."""
    config.validate()
    rng = Rng(seed)
    d = config.token_dim

    stems = {}
    for modality in MODALITIES:
        blocks = []
        c_in = 1
        for c_out in config.stem_channels:
            blocks.append(
                StemBlock(
                    conv1=_init_conv(rng, c_out, c_in, 3),
                    bn1=_init_bn(c_out),
                    conv2=_init_conv(rng, c_out, c_out, 3),
                    bn2=_init_bn(c_out),
                    residual=_init_conv(rng, c_out, c_in, 1),
                )
            )
            c_in = c_out
        final = _init_conv(rng, config.embed_dim, c_in, 3)
        stems[modality] = StemWeights(blocks, final)

    class_token = rng.truncated_normal((1, d), std=0.02).astype(np.float32)
    positional = rng.truncated_normal((config.token_count, d), std=0.02).astype(np.float32)

    encoder = []
    for _ in range(config.encoder_layers):
        attn = AttentionParams(
            wq=rng.truncated_normal((d, d), std=0.02).astype(np.float32),
            wk=rng.truncated_normal((d, d), std=0.02).astype(np.float32),
            wv=rng.truncated_normal((d, d), std=0.02).astype(np.float32),
            wo=rng.truncated_normal((d, d), std=0.02).astype(np.float32),
            bq=np.zeros(d, dtype=np.float32),
            bk=np.zeros(d, dtype=np.float32),
            bv=np.zeros(d, dtype=np.float32),
            bo=np.zeros(d, dtype=np.float32),
        )
        encoder.append(
            EncoderLayerWeights(
                ln_attn=_init_ln(d),
                attention=attn,
                ln_ffn=_init_ln(d),
                ffn_in=_init_linear(rng, config.ffn_hidden, d),
                ffn_out=_init_linear(rng, d, config.ffn_hidden),
            )
        )

    def head(out_dim: int) -> HeadWeights:
        return HeadWeights(
            ln_in=_init_ln(d),
            hidden=_init_linear(rng, d, d),
            ln_hidden=_init_ln(d),
            out=_init_linear(rng, out_dim, d),
        )

    return VitalWeights(
        config=config,
        stems=stems,
        class_token=class_token,
        positional=positional,
        encoder=encoder,
        head_objectness=head(1),
        head_box=head(4),
    )


def stem_forward(stem: StemWeights, plane: np.ndarray, config: VitalConfig) -> np.ndarray:
    """One modality plane (1, 160, 160) -> (embed_dim, 20, 20)."""
    plane = np.asarray(plane, dtype=np.float32)
    if plane.shape != (1, config.image_size, config.image_size):
        raise ContractViolation(f"stem expects (1,{config.image_size},{config.image_size})")
    x = plane
    for block in stem.blocks:
        y = conv2d_forward(x, block.conv1.kernels, block.conv1.bias, stride=1, padding=1)
        y = batchnorm_inference(y, block.bn1.mean, block.bn1.var, block.bn1.gamma, block.bn1.beta)
        y = np.maximum(y, 0.0)
        y = conv2d_forward(y, block.conv2.kernels, block.conv2.bias, stride=1, padding=1)
        y = batchnorm_inference(y, block.bn2.mean, block.bn2.var, block.bn2.gamma, block.bn2.beta)
        r = conv2d_forward(x, block.residual.kernels, block.residual.bias, stride=1, padding=0)
        x = maxpool2_forward(np.maximum(y + r, 0.0))
    out = conv2d_forward(x, stem.final_conv.kernels, stem.final_conv.bias, stride=1, padding=1)
    expected = (config.embed_dim, config.patch_side, config.patch_side)
    if out.shape != expected:
        raise ContractViolation(f"stem produced {out.shape}, expected {expected}")
    return out


def assemble_tokens(
    s_visual: np.ndarray,
    s_thermal: np.ndarray,
    s_lidar: np.ndarray,
    weights: VitalWeights,
) -> np.ndarray:
    """Concatenate stem outputs along channels, flatten to tokens, prepend
    the class token and add the positional embedding."""
    cfg = weights.config
    expected = (cfg.embed_dim, cfg.patch_side, cfg.patch_side)
    for name, s in (("visual", s_visual), ("thermal", s_thermal), ("lidar", s_lidar)):
        if np.asarray(s).shape != expected:
            raise ContractViolation(f"{name} stem output must be {expected}")
    stacked = np.concatenate([s_visual, s_thermal, s_lidar], axis=0)  # (3*e_d, p, p)
    # token (r, c) -> row r*p + c, channels stay contiguous per modality
    flat = stacked.reshape(cfg.token_dim, cfg.patch_side * cfg.patch_side).T
    tokens = np.concatenate([weights.class_token, flat], axis=0)
    return (tokens + weights.positional).astype(np.float32)


def encoder_forward(
    tokens: np.ndarray,
    weights: VitalWeights,
    collect_attention: bool = False,
):
    """Pre-norm transformer encoder: x += MHA(LN(x)); x += FFN(LN(x)).

    With ``collect_attention`` the per-layer float64 attention maps are
    returned for probing.
    """
    cfg = weights.config
    tokens = np.asarray(tokens, dtype=np.float32)
    if tokens.shape != (cfg.token_count, cfg.token_dim):
        raise ContractViolation(
            f"encoder expects ({cfg.token_count},{cfg.token_dim}), got {tokens.shape}"
        )
    x = tokens.astype(np.float64)  # residual stream stays float64 until exit
    maps = []
    for layer in weights.encoder:
        normed = layernorm(x, layer.ln_attn.gamma, layer.ln_attn.beta)
        if collect_attention:
            att_out, att_w = multihead_attention(
                normed, layer.attention, cfg.heads, return_weights=True
            )
            maps.append(att_w)
        else:
            att_out = multihead_attention(normed, layer.attention, cfg.heads)
        x += att_out
        normed = layernorm(x, layer.ln_ffn.gamma, layer.ln_ffn.beta)
        h = gelu(dense_forward(layer.ffn_in, normed))
        x += dense_forward(layer.ffn_out, h)
    out = x.astype(np.float32)
    if collect_attention:
        return out, maps
    return out


def _head_forward(head: HeadWeights, cls_row: np.ndarray) -> np.ndarray:
    x = layernorm(cls_row, head.ln_in.gamma, head.ln_in.beta)
    x = gelu(dense_forward(head.hidden, x)).astype(np.float32)
    x = layernorm(x, head.ln_hidden.gamma, head.ln_hidden.beta)
    return dense_forward(head.out, x).astype(np.float64)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _check_finite(name: str, x: np.ndarray) -> np.ndarray:
    if not np.isfinite(x).all():
        raise NumericFault(f"non-finite values after {name}")
    return x


def detect(img: MultimodalImage, weights: VitalWeights) -> Detection:
    """Full forward pass to a Detection; pure in (image, weights)."""
    cfg = weights.config
    stem_out = {}
    for idx, modality in enumerate(MODALITIES):
        plane = img.planes[idx][None, :, :]
        stem_out[modality] = _check_finite(
            f"stem[{modality}]", stem_forward(weights.stems[modality], plane, cfg)
        )
    tokens = _check_finite(
        "token assembly",
        assemble_tokens(stem_out["visual"], stem_out["thermal"], stem_out["lidar"], weights),
    )
    encoded = _check_finite("encoder", encoder_forward(tokens, weights))
    cls_row = encoded[0]
    obj_logit = _check_finite("objectness head", _head_forward(weights.head_objectness, cls_row))
    box_logit = _check_finite("box head", _head_forward(weights.head_box, cls_row))
    objectness = float(_sigmoid(obj_logit)[0])
    raw = _sigmoid(box_logit)
    x_lo, x_hi = sorted((float(raw[0]), float(raw[2])))
    y_lo, y_hi = sorted((float(raw[1]), float(raw[3])))
    return Detection(objectness, BBox(x_lo, y_lo, x_hi, y_hi))
