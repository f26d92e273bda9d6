"""Recursive mixed-sample augmentation with a cross-iteration consistency loss."""

from .consistency import LossTerms, RoiSpec, head_forward, kl_consistency, roi_align_1x1, total_loss
from .data import AugPolicy, Dataset, augment, load_cifar10_bin, make_synthetic
from .layers import ClassifierNet, build_tiny_cnn
from .losses import one_hot, softmax, softmax_cross_entropy
from .mix import (Box, MixConfig, MixResult, MixState, cutmix_step, effective_class_count,
                  mixup_step, recursive_mix_step, resize_fill, sample_box, sample_lambda)
from .optim import SGD, LrSchedule
from .tensor import Tensor
from .trainer import RunMetrics, TrainConfig, emit_cam, evaluate, train

__version__ = "0.1.0"
