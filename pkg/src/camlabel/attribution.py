"""Gradient-based class activation maps from the final decoder layer.

The channel weights are the spatially *summed* gradients of the class logit
with respect to the decoder features. For a head that is exactly global
average pooling followed by a linear layer this makes the weights equal the
head weights, so the map reduces to the classic closed-form CAM
``max(0, sum_k w_k F_k)``. (Spatially averaged gradients would differ only
by the constant 1/(H*W), which normalization erases anyway.)
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import torch

from .unet import image_to_tensor


@dataclass(frozen=True)
class AttributionMap:
    """Per-pixel nonnegative relevance of one class for one image patch."""

    values: np.ndarray
    normalization: str = "raw"  # "raw" | "unit_max"
    class_id: int = 0
    image_ref: str | None = None
    generator: str = "gradcam"  # "gradcam" | "advcam"
    degenerate: bool = False

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise ValueError(f"attribution map must be 2-D, got {values.shape}")
        if values.size and float(values.min()) < 0:
            raise ValueError("attribution map must be nonnegative")
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def _model_dtype(model, fallback=torch.float32):
    try:
        return next(model.parameters()).dtype
    except StopIteration:
        return fallback


def gradcam_tensor(model, x: torch.Tensor, class_index: int = 0):
    """Grad-CAM for an already-batched input tensor.

    Returns ``(map_values, logit)`` with the map as a detached (H, W)
    tensor. Kept separate from :func:`gradcam` so the climbing loop can
    reuse perturbed tensors without round-tripping through numpy.
    """
    was_training = model.training
    model.eval()
    try:
        with torch.enable_grad():
            logits, feats = model(x)
            if logits.ndim != 2 or logits.shape[0] != 1:
                raise ValueError(f"expected (1, K) logits, got {tuple(logits.shape)}")
            if not 0 <= class_index < logits.shape[1]:
                raise IndexError(
                    f"class index {class_index} out of range for {logits.shape[1]} logits"
                )
            y = logits[0, class_index]
            (grad_f,) = torch.autograd.grad(y, feats)
    finally:
        if was_training:
            model.train()
    if not torch.isfinite(grad_f).all():
        raise FloatingPointError("non-finite gradients in attribution")
    alpha = grad_f.sum(dim=(2, 3))  # (1, C) spatially summed gradients
    cam = (alpha[:, :, None, None] * feats).sum(dim=1)
    cam = torch.clamp_min(cam, 0.0)
    return cam[0].detach(), float(y.detach())


def gradcam(model, patch, class_index: int = 0, image_ref: str | None = None,
            dtype=None) -> AttributionMap:
    """Raw (unnormalized) Grad-CAM of ``class_index`` for one image patch.

    The model must follow the ``forward(x) -> (logits, features)``
    convention with features at the attribution layer.
    """
    if dtype is None:
        dtype = _model_dtype(model)
    x = image_to_tensor(patch, dtype=dtype)
    values, _ = gradcam_tensor(model, x, class_index)
    return AttributionMap(
        values=values.cpu().numpy(),
        normalization="raw",
        class_id=class_index,
        image_ref=image_ref,
        generator="gradcam",
    )


def normalize(amap: AttributionMap) -> AttributionMap:
    """Scale a raw map to unit maximum.

    An identically-zero map stays zero and comes back flagged degenerate;
    that is a valid outcome, not an error.
    """
    if amap.normalization != "raw":
        raise ValueError(f"normalize expects a raw map, got {amap.normalization!r}")
    peak = float(amap.values.max()) if amap.values.size else 0.0
    if peak > 0:
        return replace(amap, values=amap.values / peak, normalization="unit_max")
    return replace(amap, normalization="unit_max", degenerate=True)
