"""Training loop, evaluation, and diagnostics.

Per iteration: mix the batch against the rolling history, forward to the
feature map and GAP logits, add the area-weighted KL term against the stored
prediction when a patch was pasted, backprop, SGD step, then store the fresh
GAP logits (detached) for the next iteration. Everything is driven by
independent child generators of the config seed, so traces are reproducible
and the mixing stream never perturbs batch order or augmentation.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .consistency import RoiSpec, head_forward, roi_align_1x1, total_loss
from .data import AugPolicy, Dataset, augment_batch, load_cifar10_bin, make_synthetic
from .layers import ClassifierNet, build_tiny_cnn
from .losses import one_hot
from .mix import MixConfig, MixState, cutmix_step, effective_class_count, mixup_step, recursive_mix_step
from .optim import SGD, LrSchedule


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field_name = field_name


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch_indices: np.ndarray, detail: str):
        super().__init__(
            f"non-finite loss at epoch {epoch}; offending batch indices {batch_indices.tolist()}: {detail}")
        self.epoch = epoch
        self.batch_indices = batch_indices


@dataclass
class TrainConfig:
    mode: str = "recursivemix"           # recursivemix | cutmix | mixup | none
    alpha: float = 0.5
    omega: float = 0.1
    shared_head: bool = False
    interpolation: str = "nearest"
    resize_strategy: str = "resize"
    epochs: int = 30
    batch_size: int = 128
    base_lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    warmup_epochs: int = 5
    min_lr: float = 0.0
    seed: int = 0
    dataset: str = "synthetic"          # synthetic | cifar10
    data_dir: str = "data/cifar-10-batches-bin"
    synthetic_classes: int = 4
    synthetic_per_class: int = 100
    synthetic_seed: int = 7
    augment: bool = True
    sampling_ratio: int = 2
    eff_class_threshold: float = 1e-4
    deploy_checkpoint: bool = False
    out_dir: str = "runs/default"

    def validate(self) -> None:
        if self.mode not in MixConfig.MODES:
            raise ConfigError("mode", f"must be one of {MixConfig.MODES}, got {self.mode!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha", f"must lie in [0, 1], got {self.alpha}")
        if self.omega < 0:
            raise ConfigError("omega", f"must be >= 0, got {self.omega}")
        if self.interpolation not in ("nearest", "bilinear"):
            raise ConfigError("interpolation", f"must be nearest or bilinear, got {self.interpolation!r}")
        if self.resize_strategy not in ("resize", "cut"):
            raise ConfigError("resize_strategy", f"must be resize or cut, got {self.resize_strategy!r}")
        if self.epochs < 1:
            raise ConfigError("epochs", f"must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError("batch_size", f"must be >= 1, got {self.batch_size}")
        if self.base_lr <= 0:
            raise ConfigError("base_lr", f"must be positive, got {self.base_lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum", f"must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay", f"must be >= 0, got {self.weight_decay}")
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ConfigError("warmup_epochs", f"must lie in [0, epochs], got {self.warmup_epochs}")
        if self.dataset not in ("synthetic", "cifar10"):
            raise ConfigError("dataset", f"must be synthetic or cifar10, got {self.dataset!r}")
        if self.sampling_ratio < 1:
            raise ConfigError("sampling_ratio", f"must be >= 1, got {self.sampling_ratio}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name: f.type for f in dataclasses.fields(cls)}
        for key in values:
            if key not in known:
                raise ConfigError(key, "unknown config field")
        cfg = cls(**values)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def mix_config(self) -> MixConfig:
        return MixConfig(alpha=self.alpha, mode=self.mode,
                         interpolation=self.interpolation, resize_strategy=self.resize_strategy)


CSV_HEADER = "epoch,lr,ce,kl,total,top1,top5,eff_classes,seconds"


@dataclass
class EpochRow:
    epoch: int
    lr: float
    ce: float
    kl: float
    total: float
    top1: float
    top5: float
    eff_classes: float
    seconds: float

    def to_csv(self) -> str:
        return (f"{self.epoch},{self.lr:.8f},{self.ce:.8f},{self.kl:.8f},{self.total:.8f},"
                f"{self.top1:.6f},{self.top5:.6f},{self.eff_classes:.6f},{self.seconds:.3f}")


@dataclass
class RunMetrics:
    rows: list[EpochRow] = field(default_factory=list)

    def append(self, row: EpochRow) -> None:
        self.rows.append(row)

    def to_csv(self) -> str:
        return "\n".join([CSV_HEADER] + [r.to_csv() for r in self.rows]) + "\n"

    def write_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_csv())

    @property
    def best_top1(self) -> float:
        return min(r.top1 for r in self.rows)

    @property
    def final_top1(self) -> float:
        return self.rows[-1].top1


def load_datasets(config: TrainConfig) -> tuple[Dataset, Dataset]:
    if config.dataset == "cifar10":
        return load_cifar10_bin(config.data_dir)
    train = make_synthetic(config.synthetic_seed, config.synthetic_classes,
                           config.synthetic_per_class, split="train")
    test = make_synthetic(config.synthetic_seed + 1, config.synthetic_classes,
                          max(config.synthetic_per_class // 2, 10), split="test")
    return train, test


def train(config: TrainConfig, train_set: Dataset | None = None, test_set: Dataset | None = None,
          log=None, clock=time.perf_counter) -> tuple[ClassifierNet, RunMetrics]:
    """Run the full loop; returns the trained model and per-epoch metrics."""
    config.validate()
    if train_set is None or test_set is None:
        train_set, test_set = load_datasets(config)

    master = np.random.default_rng(config.seed)
    init_rng, order_rng, aug_rng, mix_rng = master.spawn(4)

    num_classes = train_set.class_count
    model = build_tiny_cnn(num_classes, init_rng, input_size=train_set.images.shape[2])

    use_consistency = config.mode == "recursivemix" and config.omega > 0
    trainable = model.parameters(include_roi_head=use_consistency and not config.shared_head)
    optimizer = SGD(trainable, momentum=config.momentum, weight_decay=config.weight_decay)
    schedule = LrSchedule(config.base_lr, config.warmup_epochs, config.epochs, config.min_lr)

    mix_cfg = config.mix_config()
    state = MixState()
    policy = AugPolicy(enabled=config.augment)
    image_extent = train_set.images.shape[2]
    metrics = RunMetrics()
    n = len(train_set)
    batches_per_epoch = n // config.batch_size
    if batches_per_epoch == 0:
        raise ConfigError("batch_size", f"exceeds dataset size {n}")

    for epoch in range(config.epochs):
        t0 = clock()
        lr = schedule.lr_at(epoch)
        order = order_rng.permutation(n)
        ce_sum = kl_sum = total_sum = eff_sum = 0.0

        for b in range(batches_per_epoch):
            idx = order[b * config.batch_size:(b + 1) * config.batch_size]
            images = augment_batch(train_set.images[idx], policy, aug_rng)
            labels = one_hot(train_set.labels[idx], num_classes)

            if config.mode == "recursivemix":
                prev_logits = state.hist_logits
                res = recursive_mix_step(state, images, labels, mix_rng, mix_cfg)
            elif config.mode == "cutmix":
                prev_logits, res = None, cutmix_step(images, labels, mix_rng, mix_cfg)
            elif config.mode == "mixup":
                prev_logits, res = None, mixup_step(images, labels, mix_rng, config.alpha)
            else:
                prev_logits, res = None, None

            mixed = res.images if res is not None else images
            mixed_labels = res.labels if res is not None else labels
            lam_eff = res.lambda_eff if res is not None else 0.0

            feature_map, logits = model.forward(mixed)

            roi_logits = None
            if use_consistency and lam_eff > 0.0 and prev_logits is not None:
                roi = RoiSpec.from_box(res.box, image_extent, image_extent,
                                       model.spatial_scale, config.sampling_ratio)
                roi_feats = roi_align_1x1(feature_map, roi)
                roi_logits = head_forward(roi_feats, model.head, model.roi_head, config.shared_head)

            terms = total_loss(logits, mixed_labels, roi_logits, prev_logits,
                               lam_eff if roi_logits is not None else 0.0, config.omega)
            total_value = terms.total.item()
            if not np.isfinite(total_value):
                raise TrainingDiverged(epoch, idx, f"loss={total_value}, ce={terms.ce}, kl={terms.kl}")

            optimizer.zero_grad()
            terms.total.backward()
            optimizer.step(lr)

            if config.mode == "recursivemix":
                state.store_logits(logits.data)

            ce_sum += terms.ce
            kl_sum += terms.kl
            total_sum += total_value
            eff_sum += effective_class_count(mixed_labels, config.eff_class_threshold)

        top1, top5 = evaluate(model, test_set)
        row = EpochRow(
            epoch=epoch, lr=lr,
            ce=ce_sum / batches_per_epoch, kl=kl_sum / batches_per_epoch,
            total=total_sum / batches_per_epoch,
            top1=top1, top5=top5,
            eff_classes=eff_sum / batches_per_epoch,
            seconds=clock() - t0)
        metrics.append(row)
        if log is not None:
            log(f"epoch {epoch:3d}  lr {lr:.4f}  loss {row.total:.4f}  "
                f"top1 {top1:.2f}%  eff {row.eff_classes:.2f}")

    return model, metrics


def evaluate(model: ClassifierNet, dataset: Dataset, batch_size: int = 256) -> tuple[float, float]:
    """Single-crop top-1 / top-5 error in percent, GAP head only."""
    n = len(dataset)
    top1_wrong = 0
    top5_wrong = 0
    k = min(5, dataset.class_count)
    for start in range(0, n, batch_size):
        images = dataset.images[start:start + batch_size]
        labels = dataset.labels[start:start + batch_size]
        _, logits = model.forward(images)
        preds = logits.data
        top1_wrong += int((preds.argmax(axis=1) != labels).sum())
        topk = np.argpartition(-preds, k - 1, axis=1)[:, :k]
        top5_wrong += int((~(topk == labels[:, None]).any(axis=1)).sum())
    return 100.0 * top1_wrong / n, 100.0 * top5_wrong / n


def emit_cam(model: ClassifierNet, image: np.ndarray, class_id: int) -> np.ndarray:
    """Class activation map over the feature grid, min-max scaled to [0, 1]."""
    num_classes = model.head.weight.shape[0]
    if not 0 <= class_id < num_classes:
        raise ValueError(f"class_id {class_id} outside [0, {num_classes})")
    fmap, _ = model.forward(image[None])
    weights = model.head.weight.data[class_id]            # (C,)
    heat = np.tensordot(weights, fmap.data[0], axes=(0, 0))  # (h, w)
    lo, hi = heat.min(), heat.max()
    if hi - lo < 1e-12:
        return np.zeros_like(heat)
    return (heat - lo) / (hi - lo)


def upscale_nearest(heatmap: np.ndarray, size: int) -> np.ndarray:
    from .mix import _nearest_indices
    rows = _nearest_indices(heatmap.shape[0], size)
    cols = _nearest_indices(heatmap.shape[1], size)
    return heatmap[rows[:, None], cols[None, :]]


def track_effective_classes(metrics: RunMetrics) -> list[float]:
    """Per-epoch mean effective class count of the fused training labels."""
    return [r.eff_classes for r in metrics.rows]
