"""Shared encoder with attention gates, segmentation decoder, multi-depth heads.

The encoder is a four-stage residual network (strides 4/8/16/32, optional
split-attention blocks). Stages 1-3 pass through additive attention gates
driven by the deepest feature; the gate maps double as the localization prior
for pseudo-mask generation. The decoder is DeepLabv3+-style (ASPP over f4
plus a 48-channel skip from f1) and emits a sigmoid probability map at input
resolution. Classification pools ROI-processed features from all four depths
through per-depth linear heads and averages the logits.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from safetensors.torch import load_file, save_file

from .imaging import BBox
from .pgm import AttentionSet
from .rcm import RoiParams, apply_roi_strategy, crop_roi_features

STRIDES = (4, 8, 16, 32)


@dataclass
class ModelConfig:
    input_size: int = 64
    in_channels: int = 1
    widths: tuple[int, int, int, int] = (32, 64, 128, 256)
    blocks: tuple[int, int, int, int] = (1, 1, 1, 1)
    use_split_attention: bool = False
    use_attention_gates: bool = True
    use_aux_seg: bool = True
    num_classes: int = 3
    aspp_channels: int = 64
    decoder_channels: int = 64
    low_level_channels: int = 48
    roi: RoiParams = field(default_factory=RoiParams)

    def validate(self) -> "ModelConfig":
        if self.input_size < 8:
            raise ValueError(f"input_size must be >= 8, got {self.input_size}")
        if len(self.widths) != 4 or any(c <= 0 for c in self.widths):
            raise ValueError(f"widths must be 4 positive ints, got {self.widths}")
        if len(self.blocks) != 4 or any(b < 1 for b in self.blocks):
            raise ValueError(f"blocks must be 4 ints >= 1, got {self.blocks}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        self.roi.validate()
        if self.roi.strategy != "none" and not self.use_aux_seg:
            raise ValueError(
                f"roi_strategy {self.roi.strategy!r} needs the segmentation "
                "decoder (use_aux_seg=True)")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        roi = d.pop("roi", {})
        if roi.get("output_sizes") is not None:
            roi["output_sizes"] = tuple(tuple(s) for s in roi["output_sizes"])
        return cls(widths=tuple(d.pop("widths")), blocks=tuple(d.pop("blocks")),
                   roi=RoiParams(**roi), **d).validate()


@dataclass
class EncoderFeatures:
    """Multi-depth features; f1..f3 are post-gate when gates are enabled."""

    f1: torch.Tensor
    f2: torch.Tensor
    f3: torch.Tensor
    f4: torch.Tensor

    def as_list(self) -> list[torch.Tensor]:
        return [self.f1, self.f2, self.f3, self.f4]


@dataclass
class ModelOutput:
    class_logits: torch.Tensor
    features: EncoderFeatures
    seg_prob: torch.Tensor | None
    attention: tuple[torch.Tensor, torch.Tensor, torch.Tensor] | None
    roi_boxes: list[BBox]

    def attention_set(self, i: int) -> AttentionSet:
        """Detached numpy attention maps for sample i (pseudo-mask input)."""
        if self.attention is None:
            raise ValueError("model ran without attention gates")
        a1, a2, a3 = (a[i, 0].detach().cpu().numpy() for a in self.attention)
        h, w = self.seg_prob.shape[-2:] if self.seg_prob is not None else (
            self.features.f1.shape[-2] * STRIDES[0],
            self.features.f1.shape[-1] * STRIDES[0])
        return AttentionSet(a1=a1, a2=a2, a3=a3, source_resolution=(h, w))


class _GroupNorm(nn.GroupNorm):
    """GroupNorm that also accepts (1, C, 1, 1) inputs.

    torch rejects that shape outright; it occurs here for single-sample
    inference whenever f4 collapses to 1x1 (8-32 px toy inputs). The manual
    path computes the identical per-(sample, group) statistics.
    """

    def forward(self, x):
        if x.shape[0] * x.shape[2:].numel() > 1:
            return super().forward(x)
        b, c = x.shape[:2]
        xg = x.reshape(b, self.num_groups, -1)
        mean = xg.mean(-1, keepdim=True)
        var = xg.var(-1, unbiased=False, keepdim=True)
        out = ((xg - mean) / torch.sqrt(var + self.eps)).reshape(x.shape)
        return out * self.weight.view(1, c, 1, 1) + self.bias.view(1, c, 1, 1)


def _group_norm(channels: int) -> nn.GroupNorm:
    for groups in (8, 4, 2, 1):
        if channels % groups == 0:
            return _GroupNorm(groups, channels)
    return _GroupNorm(1, channels)


def _conv_gn_relu(in_c, out_c, kernel=3, stride=1, dilation=1):
    pad = dilation if kernel == 3 else 0
    return nn.Sequential(
        nn.Conv2d(in_c, out_c, kernel, stride=stride, padding=pad,
                  dilation=dilation, bias=False),
        _group_norm(out_c),
        nn.ReLU(inplace=True),
    )


class SplAtConv2d(nn.Module):
    """Radix-2 split-attention convolution (ResNeSt-style)."""

    def __init__(self, in_c: int, out_c: int, radix: int = 2, reduction: int = 4):
        super().__init__()
        self.radix = radix
        self.out_c = out_c
        inter = max(out_c * radix // reduction, 8)
        self.conv = nn.Sequential(
            nn.Conv2d(in_c, out_c * radix, 3, padding=1, bias=False),
            _group_norm(out_c * radix),
            nn.ReLU(inplace=True),
        )
        self.fc1 = nn.Conv2d(out_c, inter, 1)
        self.fc2 = nn.Conv2d(inter, out_c * radix, 1)

    def forward(self, x):
        b = x.shape[0]
        splits = self.conv(x).reshape(b, self.radix, self.out_c, *x.shape[-2:])
        gap = splits.sum(dim=1).mean(dim=(2, 3), keepdim=True)
        att = self.fc2(F.relu(self.fc1(gap)))
        att = att.reshape(b, self.radix, self.out_c, 1, 1).softmax(dim=1)
        return (splits * att).sum(dim=1)


class ResidualBlock(nn.Module):
    def __init__(self, in_c: int, out_c: int, stride: int = 1,
                 split_attention: bool = False):
        super().__init__()
        self.conv1 = _conv_gn_relu(in_c, out_c, stride=stride)
        if split_attention:
            self.conv2 = nn.Sequential(SplAtConv2d(out_c, out_c), _group_norm(out_c))
        else:
            self.conv2 = nn.Sequential(
                nn.Conv2d(out_c, out_c, 3, padding=1, bias=False),
                _group_norm(out_c))
        if stride != 1 or in_c != out_c:
            self.skip = nn.Sequential(
                nn.Conv2d(in_c, out_c, 1, stride=stride, bias=False),
                _group_norm(out_c))
        else:
            self.skip = nn.Identity()

    def forward(self, x):
        return F.relu(self.conv2(self.conv1(x)) + self.skip(x))


class AttentionGate(nn.Module):
    """Additive attention gate: alpha = sigmoid(psi(relu(Wx x_down + Wg g))).

    The joint term lives on x's half-resolution grid: Wx subsamples x by 2 and
    the (deeper, coarser) gating signal is projected and upsampled to that
    grid. alpha is then upsampled back to x's grid and applied multiplicatively.
    """

    def __init__(self, x_channels: int, gate_channels: int,
                 subsample: bool = True):
        super().__init__()
        # full width: the relu'd joint term needs paired +/- channels to score
        # bright and dark structures alike
        inter = max(x_channels, 8)
        # normalized projections keep the joint term scale-stable; without
        # them the gate can drift into sigmoid saturation early in training
        self.theta_x = nn.Sequential(
            nn.Conv2d(x_channels, inter, 1, stride=2 if subsample else 1,
                      bias=False),
            _group_norm(inter))
        self.phi_g = nn.Sequential(
            nn.Conv2d(gate_channels, inter, 1, bias=False),
            _group_norm(inter))
        self.psi = nn.Conv2d(inter, 1, 1)

    def forward(self, x, g):
        x_down = self.theta_x(x)
        g_up = F.interpolate(self.phi_g(g), size=x_down.shape[-2:],
                             mode="bilinear", align_corners=False)
        joint = F.relu(x_down + g_up)
        alpha = torch.sigmoid(self.psi(joint))
        alpha = F.interpolate(alpha, size=x.shape[-2:], mode="bilinear",
                              align_corners=False)
        return x * alpha, alpha


class Encoder(nn.Module):
    """Stem (stride 2) plus four residual stages -> features at strides 4/8/16/32."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        w = cfg.widths
        self.stem = _conv_gn_relu(cfg.in_channels, w[0], stride=2)
        chans = [w[0], w[0], w[1], w[2]]
        self.stages = nn.ModuleList()
        for i in range(4):
            layers = [ResidualBlock(chans[i], w[i], stride=2,
                                    split_attention=cfg.use_split_attention)]
            layers += [ResidualBlock(w[i], w[i],
                                     split_attention=cfg.use_split_attention)
                       for _ in range(cfg.blocks[i] - 1)]
            self.stages.append(nn.Sequential(*layers))

    def forward(self, x):
        x = self.stem(x)
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


class ASPP(nn.Module):
    """Atrous spatial pyramid pooling: rates 1/6/12/18 plus image-level pooling."""

    def __init__(self, in_c: int, out_c: int):
        super().__init__()
        self.branches = nn.ModuleList([
            _conv_gn_relu(in_c, out_c, kernel=1),
            _conv_gn_relu(in_c, out_c, dilation=6),
            _conv_gn_relu(in_c, out_c, dilation=12),
            _conv_gn_relu(in_c, out_c, dilation=18),
        ])
        # no norm after global pooling: a 1x1 map has no spatial statistics
        self.image_pool = nn.Sequential(
            nn.AdaptiveAvgPool2d(1), nn.Conv2d(in_c, out_c, 1),
            nn.ReLU(inplace=True))
        self.project = _conv_gn_relu(out_c * 5, out_c, kernel=1)

    def forward(self, x):
        outs = [branch(x) for branch in self.branches]
        pooled = F.interpolate(self.image_pool(x), size=x.shape[-2:],
                               mode="bilinear", align_corners=False)
        return self.project(torch.cat(outs + [pooled], dim=1))


class Decoder(nn.Module):
    """DeepLabv3+-style decoder -> sigmoid probability map at input resolution."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.aspp = ASPP(cfg.widths[3], cfg.aspp_channels)
        self.low_proj = _conv_gn_relu(cfg.widths[0], cfg.low_level_channels,
                                      kernel=1)
        self.refine = nn.Sequential(
            _conv_gn_relu(cfg.aspp_channels + cfg.low_level_channels,
                          cfg.decoder_channels),
            _conv_gn_relu(cfg.decoder_channels, cfg.decoder_channels),
        )
        self.head = nn.Conv2d(cfg.decoder_channels, 1, 1)

    def forward(self, low, deep, out_size):
        x = self.aspp(deep)
        x = F.interpolate(x, size=low.shape[-2:], mode="bilinear",
                          align_corners=False)
        x = self.refine(torch.cat([x, self.low_proj(low)], dim=1))
        logits = F.interpolate(self.head(x), size=out_size, mode="bilinear",
                               align_corners=False)
        return torch.sigmoid(logits)


class ClassificationHeads(nn.Module):
    """Per-depth global average pooling + linear head; logits averaged across depths."""

    def __init__(self, channels, num_classes: int):
        super().__init__()
        self.heads = nn.ModuleList(nn.Linear(c, num_classes) for c in channels)

    def forward(self, features):
        if len(features) == 0:
            raise RuntimeError("classification head received no features")
        if len(features) != len(self.heads):
            raise RuntimeError(
                f"expected {len(self.heads)} depth features, got {len(features)}")
        logits = [head(f.mean(dim=(2, 3)))
                  for head, f in zip(self.heads, features)]
        return torch.stack(logits, dim=0).mean(dim=0)


class WalNet(nn.Module):
    """Multi-task network: classification primary, weakly supervised segmentation aux."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg.validate()
        self.encoder = Encoder(cfg)
        w = cfg.widths
        if cfg.use_attention_gates:
            # subsample the joint term only on grids large enough to afford
            # it; attention coarser than ~4x4 cannot localize anything
            self.gates = nn.ModuleList(
                AttentionGate(w[i], w[3],
                              subsample=cfg.input_size // STRIDES[i] >= 32)
                for i in range(3))
        else:
            self.gates = None
        self.decoder = Decoder(cfg) if cfg.use_aux_seg else None
        self.heads = ClassificationHeads(w, cfg.num_classes)
        self.apply(_init_weights)

    def forward(self, x: torch.Tensor,
                rcm_seg_override: torch.Tensor | None = None) -> ModelOutput:
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise ValueError(f"expected (B,{self.cfg.in_channels},H,W) input, "
                             f"got {tuple(x.shape)}")
        if x.shape[-2] != self.cfg.input_size or x.shape[-1] != self.cfg.input_size:
            raise ValueError(
                f"input is {tuple(x.shape[-2:])}, model configured for "
                f"{self.cfg.input_size}x{self.cfg.input_size}")
        raw = self.encoder(x)
        f4 = raw[3]
        if self.gates is not None:
            gated, alphas = [], []
            for gate, feat in zip(self.gates, raw[:3]):
                out, alpha = gate(feat, f4)
                gated.append(out)
                alphas.append(alpha)
            attention = tuple(alphas)
        else:
            gated = list(raw[:3])
            attention = None
        feats = EncoderFeatures(f1=gated[0], f2=gated[1], f3=gated[2], f4=f4)

        seg_prob = None
        if self.decoder is not None:
            # low-level skip uses the raw stage-1 feature: the decoder follows
            # the pseudo-masks, so feeding it gated features would let noisy
            # masks reinforce themselves through the attention maps
            seg_prob = self.decoder(raw[0], f4, x.shape[-2:])

        depth_feats = feats.as_list()
        if self.cfg.roi.strategy == "none" or seg_prob is None:
            roi_feats = depth_feats
            boxes = [BBox.full(*x.shape[-2:])] * x.shape[0]
        else:
            rcm_input = rcm_seg_override if rcm_seg_override is not None else seg_prob
            roi_feats, boxes = apply_roi_strategy(
                depth_feats, rcm_input, self.cfg.roi, STRIDES)
        logits = self.heads(roi_feats)
        return ModelOutput(class_logits=logits, features=feats,
                           seg_prob=seg_prob, attention=attention,
                           roi_boxes=boxes)

    def crop_features_with_box(self, feats: EncoderFeatures, box: BBox,
                               input_hw) -> list[torch.Tensor]:
        """Crop one sample's depth features with a fixed box (audit/debug path)."""
        single = [f[0] if f.ndim == 4 else f for f in feats.as_list()]
        return crop_roi_features(single, box, self.cfg.roi, input_hw, STRIDES)


def _init_weights(module):
    if isinstance(module, nn.Conv2d):
        nn.init.kaiming_normal_(module.weight, mode="fan_in", nonlinearity="relu")
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.Linear):
        nn.init.kaiming_normal_(module.weight, mode="fan_in", nonlinearity="relu")
        nn.init.zeros_(module.bias)


def architecture_hash(model: nn.Module) -> str:
    """Hash of parameter names/shapes/dtypes; equal iff architectures match."""
    desc = "|".join(f"{name}:{tuple(t.shape)}:{t.dtype}"
                    for name, t in sorted(model.state_dict().items()))
    return hashlib.sha256(desc.encode()).hexdigest()


def save_checkpoint(model: WalNet, path, seed: int, extra: dict | None = None,
                    sidecar_path=None) -> Path:
    """Write parameters as safetensors plus a JSON sidecar (config + seed)."""
    path = Path(path)
    state = {k: v.detach().cpu().contiguous() for k, v in model.state_dict().items()}
    save_file(state, str(path))
    sidecar = Path(sidecar_path) if sidecar_path else path.with_name("config.json")
    meta = {"model": model.cfg.to_dict(), "seed": seed}
    meta.update(extra or {})
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True, default=str))
    return path


def load_checkpoint(path, sidecar_path=None) -> tuple[WalNet, dict]:
    path = Path(path)
    sidecar = Path(sidecar_path) if sidecar_path else path.with_name("config.json")
    meta = json.loads(sidecar.read_text())
    model = WalNet(ModelConfig.from_dict(meta["model"]))
    state = load_file(str(path))
    missing = set(model.state_dict()) ^ set(state)
    if missing:
        raise ValueError(f"checkpoint does not match config (mismatched keys: "
                         f"{sorted(missing)[:4]}...)")
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise ValueError(f"checkpoint does not match config: {exc}") from exc
    model.eval()
    return model, meta


def images_to_batch(images, device="cpu") -> torch.Tensor:
    """Stack (H,W) or (H,W,1) float images into a (B,1,H,W) float32 tensor."""
    arrs = []
    for img in images:
        a = np.asarray(img, dtype=np.float32)
        if a.ndim == 3:
            a = a[:, :, 0]
        arrs.append(a[None])
    return torch.from_numpy(np.stack(arrs)).to(device)
