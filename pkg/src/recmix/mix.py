"""Recursive mixed-sample augmentation plus CutMix and Mixup baselines.

The recursive mixer keeps a rolling buffer of the previous iteration's mixed
images, fused labels, and classifier logits. Each step shrinks the whole
historical image into a freshly sampled rectangle of the current batch
(resize-fill, so no historical content is lost), fuses labels by the clipped
area ratio, then overwrites the buffer with the result. Chained over training,
a single label accumulates an exponentially decaying mixture of every class
it ever absorbed.

One lambda and one box are drawn per batch; pairing with the buffer is by
batch index (the buffer holds a different, already shuffled batch). The
buffer is exclusively owned by its training loop; the pure sampling and
resize helpers are safe to call concurrently with independent generators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import validate_soft_labels
from .tensor import ShapeError


@dataclass
class MixConfig:
    alpha: float = 0.5
    mode: str = "recursivemix"            # recursivemix | cutmix | mixup | none
    interpolation: str = "nearest"        # nearest | bilinear
    resize_strategy: str = "resize"       # resize | cut

    MODES = ("recursivemix", "cutmix", "mixup", "none")

    def validate(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.mode not in self.MODES:
            raise ValueError(f"mode must be one of {self.MODES}, got {self.mode!r}")
        if self.interpolation not in ("nearest", "bilinear"):
            raise ValueError(f"interpolation must be nearest or bilinear, got {self.interpolation!r}")
        if self.resize_strategy not in ("resize", "cut"):
            raise ValueError(f"resize_strategy must be resize or cut, got {self.resize_strategy!r}")


@dataclass
class Box:
    """A sampled rectangle: float center and nominal size, integer clipped extent.

    effective_lambda is recomputed from the clipped integer area so that the
    label fusion coefficient always equals the visible pixel fraction.
    """
    center_x: float
    center_y: float
    nominal_w: float
    nominal_h: float
    x1: int
    y1: int
    x2: int
    y2: int
    effective_lambda: float

    @property
    def width(self) -> int:
        return self.x2 - self.x1

    @property
    def height(self) -> int:
        return self.y2 - self.y1

    @property
    def area(self) -> int:
        return self.width * self.height


@dataclass
class MixState:
    """Rolling buffer of (images, labels, logits) from the previous step."""
    hist_images: np.ndarray | None = None
    hist_labels: np.ndarray | None = None
    hist_logits: np.ndarray | None = None
    populated: bool = False

    def refresh(self, images: np.ndarray, labels: np.ndarray) -> None:
        self.hist_images = images.copy()
        self.hist_labels = labels.copy()
        self.populated = True

    def store_logits(self, logits: np.ndarray) -> None:
        self.hist_logits = np.array(logits, copy=True)


@dataclass
class MixResult:
    images: np.ndarray
    labels: np.ndarray
    box: Box | None
    lambda_eff: float
    permutation: np.ndarray | None = None


def sample_lambda(rng: np.random.Generator, alpha: float) -> float:
    """Draw the mix ratio uniformly from [0, alpha]."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return float(rng.uniform(0.0, alpha))


def sample_box(rng: np.random.Generator, lam: float, width: int, height: int,
               force_center: tuple[float, float] | None = None) -> Box:
    """Sample a rectangle of nominal size (W*sqrt(lam), H*sqrt(lam)).

    The sampled point is the box center, drawn uniformly over the image;
    the box is clipped to the image bounds and the effective area ratio is
    recomputed from the clipped integer extent.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    if width < 1 or height < 1:
        raise ValueError(f"image extent must be >= 1, got {width}x{height}")
    nominal_w = width * np.sqrt(lam)
    nominal_h = height * np.sqrt(lam)
    if force_center is not None:
        cx, cy = float(force_center[0]), float(force_center[1])
    else:
        cx = float(rng.uniform(0.0, width))
        cy = float(rng.uniform(0.0, height))
    x1 = int(np.clip(round(cx - nominal_w / 2), 0, width))
    x2 = int(np.clip(round(cx + nominal_w / 2), 0, width))
    y1 = int(np.clip(round(cy - nominal_h / 2), 0, height))
    y2 = int(np.clip(round(cy + nominal_h / 2), 0, height))
    eff = (x2 - x1) * (y2 - y1) / (width * height)
    return Box(cx, cy, nominal_w, nominal_h, x1, y1, x2, y2, eff)


def _nearest_indices(n_src: int, n_out: int) -> np.ndarray:
    # output pixel i takes source pixel floor((i + 0.5) * n_src / n_out)
    idx = np.floor((np.arange(n_out) + 0.5) * n_src / n_out).astype(np.intp)
    return np.clip(idx, 0, n_src - 1)


def _bilinear_axis(n_src: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel centers, align_corners=false; positions clamped to the grid
    src = (np.arange(n_out) + 0.5) * n_src / n_out - 0.5
    src = np.clip(src, 0.0, n_src - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_src - 1)
    frac = src - lo
    return lo, hi, frac


def resize_fill(hist_image: np.ndarray, box: Box, interpolation: str = "nearest") -> np.ndarray:
    """Shrink a whole (C, H, W) image to the box extent, preserving all content."""
    if box.area <= 0:
        raise ValueError("resize_fill needs a box with positive clipped area")
    return _resize_batch(hist_image[None], box, interpolation)[0]


def _resize_batch(images: np.ndarray, box: Box, interpolation: str) -> np.ndarray:
    _, _, h, w = images.shape
    out_h, out_w = box.height, box.width
    if interpolation == "nearest":
        rows = _nearest_indices(h, out_h)
        cols = _nearest_indices(w, out_w)
        return images[:, :, rows[:, None], cols[None, :]]
    if interpolation == "bilinear":
        ylo, yhi, fy = _bilinear_axis(h, out_h)
        xlo, xhi, fx = _bilinear_axis(w, out_w)
        fy = fy[:, None].astype(images.dtype)
        fx = fx[None, :].astype(images.dtype)
        top = images[:, :, ylo[:, None], xlo[None, :]] * (1 - fx) + images[:, :, ylo[:, None], xhi[None, :]] * fx
        bot = images[:, :, yhi[:, None], xlo[None, :]] * (1 - fx) + images[:, :, yhi[:, None], xhi[None, :]] * fx
        return top * (1 - fy) + bot * fy
    raise ValueError(f"unknown interpolation {interpolation!r}")


def _paste(dst: np.ndarray, src: np.ndarray, box: Box, strategy: str, interpolation: str) -> None:
    """Write src content into dst's box region, in place.

    resize: the whole src image shrunk to the box; cut: the congruent region.
    """
    if strategy == "resize":
        dst[:, :, box.y1:box.y2, box.x1:box.x2] = _resize_batch(src, box, interpolation)
    elif strategy == "cut":
        dst[:, :, box.y1:box.y2, box.x1:box.x2] = src[:, :, box.y1:box.y2, box.x1:box.x2]
    else:
        raise ValueError(f"unknown resize strategy {strategy!r}")


def recursive_mix_step(state: MixState, images: np.ndarray, labels: np.ndarray,
                       rng: np.random.Generator, config: MixConfig,
                       force_lambda: float | None = None,
                       force_center: tuple[float, float] | None = None) -> MixResult:
    """One step of the recursive mixer.

    Pastes the buffered previous batch into the current one (index-aligned,
    no permutation), fuses labels by the clipped area ratio, then replaces
    the buffer with the mixed output. A cold buffer, a batch-size mismatch,
    or a zero-area box all degrade to the identity mix with lambda 0; the
    buffer is refreshed either way.
    """
    config.validate()
    validate_soft_labels(labels)
    if state.populated and labels.shape[1] != state.hist_labels.shape[1]:
        raise ShapeError(
            f"label dimension {labels.shape[1]} != buffered dimension {state.hist_labels.shape[1]}")

    n, _, h, w = images.shape
    if not state.populated or n != state.hist_images.shape[0]:
        state.refresh(images, labels)
        return MixResult(images, labels, None, 0.0)

    lam = force_lambda if force_lambda is not None else sample_lambda(rng, config.alpha)
    box = sample_box(rng, lam, w, h, force_center=force_center)
    if box.effective_lambda == 0.0:
        state.refresh(images, labels)
        return MixResult(images, labels, box, 0.0)

    mixed = images.copy()
    _paste(mixed, state.hist_images, box, config.resize_strategy, config.interpolation)
    lam_eff = box.effective_lambda
    mixed_labels = lam_eff * state.hist_labels + (1.0 - lam_eff) * labels
    state.refresh(mixed, mixed_labels)
    return MixResult(mixed, mixed_labels, box, lam_eff)


def cutmix_step(images: np.ndarray, labels: np.ndarray, rng: np.random.Generator,
                config: MixConfig, force_lambda: float | None = None,
                force_center: tuple[float, float] | None = None,
                force_permutation: np.ndarray | None = None) -> MixResult:
    """Two-sample regional mix within the batch, paired by a permutation.

    resize strategy pastes the whole partner image shrunk to the box; cut
    pastes the partner's congruent region. Labels fuse by clipped area ratio.
    """
    config.validate()
    validate_soft_labels(labels)
    n, _, h, w = images.shape
    if n < 2:
        return MixResult(images, labels, None, 0.0, np.arange(n))

    perm = force_permutation if force_permutation is not None else rng.permutation(n)
    lam = force_lambda if force_lambda is not None else sample_lambda(rng, config.alpha)
    box = sample_box(rng, lam, w, h, force_center=force_center)
    if box.effective_lambda == 0.0:
        return MixResult(images, labels, box, 0.0, perm)

    mixed = images.copy()
    _paste(mixed, images[perm], box, config.resize_strategy, config.interpolation)
    lam_eff = box.effective_lambda
    mixed_labels = lam_eff * labels[perm] + (1.0 - lam_eff) * labels
    return MixResult(mixed, mixed_labels, box, lam_eff, perm)


def mixup_step(images: np.ndarray, labels: np.ndarray, rng: np.random.Generator,
               alpha_beta: float, force_lambda: float | None = None) -> MixResult:
    """Elementwise convex blend with a permuted partner, lambda ~ Beta(a, a)."""
    if alpha_beta <= 0:
        raise ValueError(f"mixup beta parameter must be positive, got {alpha_beta}")
    validate_soft_labels(labels)
    n = images.shape[0]
    perm = rng.permutation(n)
    lam = force_lambda if force_lambda is not None else float(rng.beta(alpha_beta, alpha_beta))
    mixed = lam * images + (1.0 - lam) * images[perm]
    mixed_labels = lam * labels + (1.0 - lam) * labels[perm]
    return MixResult(mixed.astype(images.dtype), mixed_labels, None, lam, perm)


def effective_class_count(labels: np.ndarray, threshold: float = 1e-4) -> float:
    """Mean number of label entries above the supervision threshold."""
    validate_soft_labels(labels)
    return float((labels > threshold).sum(axis=1).mean())
