"""Cross-iteration consistency branch.

The region of the current feature map that received the pasted historical
content is pooled to a single vector by a 1x1 RoI-align (the mean of
sampling_ratio^2 bilinear samples at regularly spaced bin-interior points,
half-pixel convention), pushed through a linear head, and pulled toward the
stored prediction of the full historical image with a KL divergence. The
stored prediction is a plain array, so gradient reaches only the current
branch. All functions here are pure; concurrent calls on disjoint data are
safe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import Linear
from .losses import kl_div_with_logits, softmax, softmax_cross_entropy
from .mix import Box
from .tensor import Tensor, ShapeError, _accum


@dataclass
class RoiSpec:
    """A box as fractions of the image extent, plus the feature-grid mapping."""
    x1: float
    y1: float
    x2: float
    y2: float
    spatial_scale: float          # feature extent / image extent
    sampling_ratio: int = 2

    def validate(self) -> None:
        if not (0.0 <= self.x1 <= self.x2 <= 1.0 and 0.0 <= self.y1 <= self.y2 <= 1.0):
            raise ValueError(f"roi corners must satisfy 0 <= lo <= hi <= 1, got {self}")
        if self.spatial_scale <= 0:
            raise ValueError(f"spatial_scale must be positive, got {self.spatial_scale}")
        if self.sampling_ratio < 1:
            raise ValueError(f"sampling_ratio must be >= 1, got {self.sampling_ratio}")

    @classmethod
    def from_box(cls, box: Box, image_w: int, image_h: int, spatial_scale: float,
                 sampling_ratio: int = 2) -> "RoiSpec":
        return cls(box.x1 / image_w, box.y1 / image_h, box.x2 / image_w, box.y2 / image_h,
                   spatial_scale, sampling_ratio)


def _bilinear_point_weights(py: float, px: float, h: int, w: int):
    """4-point bilinear weights for a continuous point, values at pixel centers."""
    u = min(max(px - 0.5, 0.0), w - 1.0)
    v = min(max(py - 0.5, 0.0), h - 1.0)
    x0 = int(np.floor(u))
    y0 = int(np.floor(v))
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    fx = u - x0
    fy = v - y0
    return ((y0, x0, (1 - fy) * (1 - fx)), (y0, x1, (1 - fy) * fx),
            (y1, x0, fy * (1 - fx)), (y1, x1, fy * fx))


def roi_weight_map(roi: RoiSpec, feat_h: int, feat_w: int) -> np.ndarray:
    """Per-pixel contribution weights of the single output bin; sums to 1."""
    roi.validate()
    image_w = feat_w / roi.spatial_scale
    image_h = feat_h / roi.spatial_scale
    fx1 = roi.x1 * image_w * roi.spatial_scale
    fx2 = roi.x2 * image_w * roi.spatial_scale
    fy1 = roi.y1 * image_h * roi.spatial_scale
    fy2 = roi.y2 * image_h * roi.spatial_scale
    if fx2 <= fx1 or fy2 <= fy1:
        raise ValueError(f"roi has zero area in feature coordinates: {roi}")
    n = roi.sampling_ratio
    weights = np.zeros((feat_h, feat_w))
    for i in range(n):
        py = fy1 + (i + 0.5) * (fy2 - fy1) / n
        for j in range(n):
            px = fx1 + (j + 0.5) * (fx2 - fx1) / n
            for y, x, wgt in _bilinear_point_weights(py, px, feat_h, feat_w):
                weights[y, x] += wgt / (n * n)
    return weights


def roi_align_1x1(feature_map: Tensor, roi: RoiSpec) -> Tensor:
    """Pool (B, C, h, w) features over the roi into (B, C); differentiable."""
    if feature_map.ndim != 4:
        raise ShapeError(f"roi_align_1x1 expects (B,C,h,w), got {feature_map.shape}")
    _, _, h, w = feature_map.shape
    weights = roi_weight_map(roi, h, w).astype(feature_map.dtype)
    out_data = np.tensordot(feature_map.data, weights, axes=([2, 3], [0, 1]))

    def backward(g):
        _accum(feature_map, g[:, :, None, None] * weights)

    return Tensor._make(out_data, (feature_map,), backward)


def kl_consistency(roi_logits: Tensor, hist_logits: np.ndarray) -> Tensor:
    """Batch-mean KL(softmax(hist) || softmax(roi)); hist is the fixed target."""
    if isinstance(hist_logits, Tensor):
        if hist_logits.requires_grad:
            raise ValueError("hist_logits must be detached; it is a stored prediction")
        hist_logits = hist_logits.data
    hist_logits = np.asarray(hist_logits)
    if roi_logits.shape != hist_logits.shape:
        raise ShapeError(f"roi logits {roi_logits.shape} != stored logits {hist_logits.shape}")
    return kl_div_with_logits(softmax(hist_logits, axis=1), roi_logits)


@dataclass
class LossTerms:
    """total = ce + omega * lambda_t * kl; kl is 0 when the branch is skipped."""
    total: Tensor
    ce: float
    kl: float
    lambda_t: float
    omega: float


def total_loss(gap_logits: Tensor, mixed_labels: np.ndarray,
               roi_logits: Tensor | None, hist_logits: np.ndarray | None,
               lambda_t: float, omega: float) -> LossTerms:
    """Cross-entropy on the fused labels plus the area-weighted consistency term.

    With lambda_t == 0 or omega == 0 the consistency branch contributes
    nothing and is skipped outright.
    """
    if not 0.0 <= lambda_t <= 1.0:
        raise ValueError(f"lambda_t must lie in [0, 1], got {lambda_t}")
    if omega < 0:
        raise ValueError(f"omega must be >= 0, got {omega}")
    ce = softmax_cross_entropy(gap_logits, mixed_labels)
    if lambda_t == 0.0 or omega == 0.0 or roi_logits is None:
        return LossTerms(total=ce, ce=ce.item(), kl=0.0, lambda_t=lambda_t, omega=omega)
    kl = kl_consistency(roi_logits, hist_logits)
    total = ce + (omega * lambda_t) * kl
    return LossTerms(total=total, ce=ce.item(), kl=kl.item(), lambda_t=lambda_t, omega=omega)


def head_forward(features: Tensor, gap_head: Linear, roi_head: Linear, shared: bool) -> Tensor:
    """Route pooled roi features through the deployable head or its private twin."""
    head = gap_head if shared else roi_head
    if features.shape[1] != head.weight.shape[1]:
        raise ShapeError(f"features have {features.shape[1]} channels, head expects {head.weight.shape[1]}")
    return head(features)
