"""U-net style binary classifier network.

The encoder is the stem plus the first residual stages of a 34-layer
residual network; the stem convolution runs at stride 1 by default so the
only downsampling comes from the maxpool and the stride-2 stages. A light
decoder with skip connections brings the features back up, and the head is
global average pooling followed by a single linear layer, which is what
makes the final decoder layer's activation maps directly usable as
class activation maps at (with the default config) input resolution.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from torchvision.models import resnet34

# fixed output widths of the resnet34 stem and residual stages
STAGE_CHANNELS = {0: 64, 1: 64, 2: 128, 3: 256}


def _conv_block(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, kernel_size=3, padding=1, bias=False),
        nn.BatchNorm2d(out_ch),
        nn.ReLU(inplace=True),
        nn.Conv2d(out_ch, out_ch, kernel_size=3, padding=1, bias=False),
        nn.BatchNorm2d(out_ch),
        nn.ReLU(inplace=True),
    )


class UNetClassifierNet(nn.Module):
    """Truncated residual encoder + U-net decoder + GAP/linear head.

    ``forward`` returns ``(logits, features)`` where ``features`` is the
    final decoder activation stack the attribution code differentiates
    against. No hooks are involved, so concurrent calls with a shared
    (frozen) instance are safe.
    """

    def __init__(self, encoder_blocks: int = 2, first_conv_stride: int = 1,
                 decoder_channels=(128, 64), num_classes: int = 1):
        super().__init__()
        if encoder_blocks not in (1, 2, 3):
            raise ValueError(f"encoder_blocks must be in {{1,2,3}}, got {encoder_blocks}")
        if first_conv_stride not in (1, 2):
            raise ValueError(f"first_conv_stride must be 1 or 2, got {first_conv_stride}")
        decoder_channels = tuple(int(c) for c in decoder_channels)
        if not 1 <= len(decoder_channels) <= encoder_blocks:
            raise ValueError(
                f"decoder_channels length must be in [1, {encoder_blocks}] "
                f"for encoder_blocks={encoder_blocks}, got {decoder_channels}"
            )
        self.encoder_blocks = encoder_blocks
        self.decoder_channels = decoder_channels

        backbone = resnet34(weights=None)
        backbone.conv1.stride = (first_conv_stride, first_conv_stride)
        # torchvision attribute names kept so a resnet34 state_dict loads
        # onto the encoder with strict=False
        self.conv1 = backbone.conv1
        self.bn1 = backbone.bn1
        self.relu = backbone.relu
        self.maxpool = backbone.maxpool
        self.layer1 = backbone.layer1
        if encoder_blocks >= 2:
            self.layer2 = backbone.layer2
        if encoder_blocks >= 3:
            self.layer3 = backbone.layer3

        # skip levels above the bottleneck, deepest first
        skip_channels = [STAGE_CHANNELS[i] for i in range(encoder_blocks)][::-1]
        up_blocks = []
        in_ch = STAGE_CHANNELS[encoder_blocks]
        for out_ch, skip_ch in zip(decoder_channels, skip_channels):
            up_blocks.append(_conv_block(in_ch + skip_ch, out_ch))
            in_ch = out_ch
        self.up_blocks = nn.ModuleList(up_blocks)
        self.head = nn.Linear(decoder_channels[-1], num_classes)

    @property
    def num_classes(self) -> int:
        return self.head.out_features

    def encode(self, x):
        """Encoder levels from full resolution down to the bottleneck."""
        levels = [self.relu(self.bn1(self.conv1(x)))]
        h = self.maxpool(levels[0])
        levels.append(self.layer1(h))
        if self.encoder_blocks >= 2:
            levels.append(self.layer2(levels[-1]))
        if self.encoder_blocks >= 3:
            levels.append(self.layer3(levels[-1]))
        return levels

    def decode(self, levels):
        h = levels[-1]
        skips = levels[:-1][::-1]
        for block, skip in zip(self.up_blocks, skips):
            h = F.interpolate(h, size=skip.shape[-2:], mode="bilinear",
                              align_corners=False)
            h = block(torch.cat([h, skip], dim=1))
        return h

    def head_forward(self, features):
        """Classification head alone: GAP over space, then linear."""
        return self.head(features.mean(dim=(2, 3)))

    def forward(self, x):
        features = self.decode(self.encode(x))
        return self.head_forward(features), features

    def load_encoder_state(self, state_dict) -> None:
        """Load pretrained 34-layer residual weights into the encoder.

        Only stem/stage tensors present in this truncation are consumed;
        decoder and head keys are ignored. The stem kernel is
        stride-independent, so stride-1 models accept stride-2 weights.
        """
        own = {k for k, _ in self.named_parameters()} | {k for k, _ in self.named_buffers()}
        encoder_keys = {k for k in own if k.split(".")[0]
                        in ("conv1", "bn1", "layer1", "layer2", "layer3")}
        filtered = {k: v for k, v in state_dict.items() if k in encoder_keys}
        missing = encoder_keys - set(filtered)
        if missing:
            raise ValueError(f"state dict missing encoder tensors: {sorted(missing)[:5]}...")
        self.load_state_dict(filtered, strict=False)


def image_to_tensor(img, dtype=torch.float32, device="cpu") -> torch.Tensor:
    """Convert an HxWx3 raster to a (1, 3, H, W) tensor in [0, 1].

    uint8 inputs are scaled by 1/255; float inputs are assumed already in
    [0, 1] and only cast.
    """
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float64) / 255.0
    t = torch.as_tensor(arr, dtype=dtype, device=device)
    return t.permute(2, 0, 1).unsqueeze(0).contiguous()


def batch_to_tensor(batch, dtype=torch.float32, device="cpu") -> torch.Tensor:
    """Convert (N, H, W, 3) image stack to a (N, 3, H, W) tensor in [0, 1]."""
    arr = np.asarray(batch)
    if arr.ndim != 4 or arr.shape[3] != 3:
        raise ValueError(f"expected NxHxWx3 batch, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float64) / 255.0
    t = torch.as_tensor(arr, dtype=dtype, device=device)
    return t.permute(0, 3, 1, 2).contiguous()
