"""Anti-adversarial climbing refinement of attribution maps.

An adversarial attack nudges an image along -grad to flip the classifier;
climbing does the opposite, ``x' = x + xi * grad_x(y_c)``, raising the
target logit so the class-relevant evidence spreads beyond the most
discriminative pixels. Iterating a small number of times (default 2) and
summing the per-iteration maps before normalizing yields masks that cover
more of the defect.

Two regularizations temper the climb:

* logits of other classes are subtracted from the objective, so climbing
  one class cannot ride a correlated class's gradient (inert for the
  single-logit binary models);
* already-salient regions are restricted: pixels whose previous normalized
  map exceeds the saliency threshold get their input gradient scaled by
  ``1 - map``, and growth of the map inside those regions is L1-penalized
  against the iteration-0 map, so the climb discovers new regions instead
  of reinforcing known ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin

from .attribution import AttributionMap, gradcam_tensor, normalize, _model_dtype
from .unet import image_to_tensor


@dataclass(frozen=True)
class ClimbConfig:
    xi: float = 8.0 / 255.0
    iterations: int = 2
    saliency_mask_threshold: float = 0.5
    regularization_weight: float = 7.0
    restrict_other_logits: bool = True

    def __post_init__(self):
        for name in ("xi", "saliency_mask_threshold", "regularization_weight"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.xi < 0:
            raise ValueError("xi must be >= 0")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not 0 < self.saliency_mask_threshold < 1:
            raise ValueError("saliency_mask_threshold must be in (0, 1)")
        if self.regularization_weight < 0:
            raise ValueError("regularization_weight must be >= 0")


@dataclass(frozen=True)
class ClimbIteration:
    logit: float
    perturbation_norm: float
    raw_map: AttributionMap


@dataclass(frozen=True)
class ClimbTrace:
    """Per-iteration record plus the normalized aggregate map."""

    iterations: tuple[ClimbIteration, ...]
    aggregate: AttributionMap
    saturation_warning: bool = False

    @property
    def logits(self) -> list[float]:
        return [it.logit for it in self.iterations]


def _objective(model, x, class_index, config: ClimbConfig, saliency_mask=None,
               reference_map=None):
    """Climb objective L and the graph tensors needed for its gradient."""
    logits, feats = model(x)
    y = logits[0, class_index]
    objective = y
    if config.restrict_other_logits and logits.shape[1] > 1:
        others = torch.cat([logits[0, :class_index], logits[0, class_index + 1:]])
        objective = objective - others.sum()
    if (config.regularization_weight > 0 and saliency_mask is not None
            and reference_map is not None):
        (grad_f,) = torch.autograd.grad(y, feats, retain_graph=True)
        alpha = grad_f.sum(dim=(2, 3)).detach()
        cam_t = torch.clamp_min((alpha[:, :, None, None] * feats).sum(dim=1)[0], 0.0)
        growth = (saliency_mask * (cam_t - reference_map)).abs().sum()
        objective = objective - config.regularization_weight * growth
    return objective


def climb_step(model, x: torch.Tensor, class_index: int, config: ClimbConfig,
               grad_scale: torch.Tensor | None = None,
               saliency_mask: torch.Tensor | None = None,
               reference_map: torch.Tensor | None = None,
               pixel_range: tuple[float, float] = (0.0, 1.0)) -> torch.Tensor:
    """One climbing step: x' = clamp(x + xi * grad_x L).

    ``grad_scale`` (H, W) multiplies the input gradient (the salient-region
    restriction); ``saliency_mask``/``reference_map`` (H, W) feed the L1
    growth penalty. All three default to off, which reduces L to the bare
    class logit.
    """
    was_training = model.training
    model.eval()
    try:
        with torch.enable_grad():
            x_live = x.detach().requires_grad_(True)
            objective = _objective(model, x_live, class_index, config,
                                   saliency_mask=saliency_mask,
                                   reference_map=reference_map)
            (grad_x,) = torch.autograd.grad(objective, x_live)
    finally:
        if was_training:
            model.train()
    if not torch.isfinite(grad_x).all():
        raise FloatingPointError("non-finite input gradient in climb step")
    if grad_scale is not None:
        grad_x = grad_x * grad_scale
    lo, hi = pixel_range
    return (x.detach() + config.xi * grad_x).clamp(lo, hi).detach()


def advcam(model, patch, class_index: int = 0, config: ClimbConfig | None = None,
           pixel_range: tuple[float, float] = (0.0, 1.0),
           image_ref: str | None = None, dtype=None) -> ClimbTrace:
    """Iterative climbing from a patch; T=0 degenerates to plain Grad-CAM.

    The trace holds T+1 iterations (iteration 0 is the unperturbed input);
    the aggregate is the normalized sum of the per-iteration raw maps.
    """
    config = config or ClimbConfig()
    if dtype is None:
        dtype = _model_dtype(model)
    x0 = image_to_tensor(patch, dtype=dtype)
    lo, hi = pixel_range

    records = []
    map_sum = None
    reference = None
    saturation = False
    x_t = x0
    for t in range(config.iterations + 1):
        try:
            values_t, logit_t = gradcam_tensor(model, x_t, class_index)
        except FloatingPointError as err:
            raise FloatingPointError(f"iteration {t}: {err}") from err
        raw = AttributionMap(values=values_t.cpu().numpy(), normalization="raw",
                             class_id=class_index, image_ref=image_ref,
                             generator="advcam")
        shift = float(torch.linalg.vector_norm((x_t - x0).flatten()))
        records.append(ClimbIteration(logit=logit_t, perturbation_norm=shift,
                                      raw_map=raw))
        map_sum = raw.values if map_sum is None else map_sum + raw.values
        if t == config.iterations:
            break

        norm_t = normalize(raw)
        sal = norm_t.values > config.saliency_mask_threshold
        scale = np.where(sal, 1.0 - norm_t.values, 1.0)
        if reference is None:
            reference = values_t  # iteration-0 raw map, the growth baseline
        try:
            x_t = climb_step(
                model, x_t, class_index, config,
                grad_scale=torch.as_tensor(scale, dtype=dtype),
                saliency_mask=torch.as_tensor(sal, dtype=dtype),
                reference_map=reference,
                pixel_range=pixel_range,
            )
        except FloatingPointError as err:
            raise FloatingPointError(f"iteration {t}: {err}") from err
        at_bounds = ((x_t == lo) | (x_t == hi)).float().mean()
        if float(at_bounds) > 0.9:
            saturation = True

    aggregate = normalize(AttributionMap(values=map_sum, normalization="raw",
                                         class_id=class_index, image_ref=image_ref,
                                         generator="advcam"))
    return ClimbTrace(iterations=tuple(records), aggregate=aggregate,
                      saturation_warning=saturation)


def trace_summary(trace: ClimbTrace) -> dict:
    """JSON-ready debug export of per-iteration logits and norms."""
    return {
        "iterations": [
            {"logit": it.logit, "perturbation_norm": it.perturbation_norm}
            for it in trace.iterations
        ],
        "saturation_warning": trace.saturation_warning,
        "degenerate": trace.aggregate.degenerate,
    }


class AdvCamExtractor(BaseEstimator, TransformerMixin):
    """Transformer-style wrapper: image patches in, refined maps out.

    Slots into sklearn pipelines between a trained classifier and
    post-processing; parameters are introspectable via get_params.
    """

    def __init__(self, model=None, xi=8.0 / 255.0, iterations=2,
                 saliency_mask_threshold=0.5, regularization_weight=7.0,
                 restrict_other_logits=True, class_index=0,
                 pixel_range=(0.0, 1.0)):
        self.model = model
        self.xi = xi
        self.iterations = iterations
        self.saliency_mask_threshold = saliency_mask_threshold
        self.regularization_weight = regularization_weight
        self.restrict_other_logits = restrict_other_logits
        self.class_index = class_index
        self.pixel_range = pixel_range

    def _config(self) -> ClimbConfig:
        return ClimbConfig(
            xi=self.xi,
            iterations=self.iterations,
            saliency_mask_threshold=self.saliency_mask_threshold,
            regularization_weight=self.regularization_weight,
            restrict_other_logits=self.restrict_other_logits,
        )

    def fit(self, X=None, y=None):
        if self.model is None:
            raise ValueError("AdvCamExtractor needs a trained model")
        self._config()  # validates parameters
        return self

    def climb(self, patch) -> ClimbTrace:
        return advcam(self.model, patch, self.class_index, self._config(),
                      pixel_range=self.pixel_range)

    def transform(self, X) -> np.ndarray:
        """Normalized aggregate maps for a stack of patches, as (N, H, W)."""
        self.fit()
        return np.stack([self.climb(patch).aggregate.values for patch in X])
