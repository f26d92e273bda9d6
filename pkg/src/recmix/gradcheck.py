"""Finite-difference verification of every analytic gradient.

Each check builds a small random configuration, projects the output onto a
fixed random direction to form a scalar (so transposition and indexing bugs
cannot cancel), and compares analytic gradients against central differences.
Double precision is the meaningful mode; single precision is exposed only to
demonstrate the precision ordering.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import layers
from .consistency import RoiSpec, roi_align_1x1
from .losses import kl_div_with_logits, softmax, softmax_cross_entropy
from .tensor import Tensor

DEFAULT_EPS = 1e-5
DEFAULT_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def finite_difference(f: Callable[[np.ndarray], float], x: np.ndarray,
                      eps: float = DEFAULT_EPS) -> np.ndarray:
    """Central-difference gradient of a scalar function, elementwise."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return grad


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(|a| + |n|, 1): relative for large grads, absolute near 0."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.abs(a) + np.abs(n), 1.0)
    return float((np.abs(a - n) / denom).max())


def _check_inputs(name: str, build_loss: Callable[[list[Tensor]], Tensor],
                  arrays: list[np.ndarray], eps: float = DEFAULT_EPS,
                  tol: float = DEFAULT_TOL) -> CheckResult:
    """FD-check the gradient of build_loss w.r.t. every array in ``arrays``."""
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build_loss(tensors)
    loss.backward()
    worst = 0.0
    for k, arr in enumerate(arrays):
        def f(x, k=k):
            probes = [Tensor(a) for a in arrays]
            probes[k] = Tensor(x)
            return build_loss(probes).item()
        numeric = finite_difference(f, arr.copy(), eps)
        worst = max(worst, max_rel_error(tensors[k].grad, numeric))
    return CheckResult(name, worst, tol)


def _projected(out: Tensor, direction: np.ndarray) -> Tensor:
    from .tensor import mul, tsum
    return tsum(mul(out, Tensor(direction)))


def _sabotaged_relu(x: Tensor) -> Tensor:
    """relu with a 1% error in its backward; proves the suite catches lies."""
    from .tensor import _accum
    mask = x.data > 0

    def backward(g):
        _accum(x, g * mask * 1.01)

    return Tensor._make(x.data * mask, (x,), backward)


def run_suite(dtype=np.float64, rng: np.random.Generator | None = None,
              sabotage_relu: bool = False) -> list[CheckResult]:
    """Every layer kind plus the losses and roi pooling; returns one result each."""
    rng = rng or np.random.default_rng(20240501)
    results: list[CheckResult] = []

    def rand(*shape):
        return (rng.standard_normal(shape) * 0.5).astype(dtype, copy=False)

    # linear: y = x W^T + b, projected
    x, w, b = rand(3, 5), rand(4, 5), rand(4)
    proj = rand(3, 4)
    results.append(_check_inputs(
        "linear", lambda t: _projected(layers.linear(t[0], t[1], t[2]), proj), [x, w, b]))

    # conv2d, stride 1 with padding and stride 2 without
    for stride, padding, tag in ((1, 1, "conv2d_s1p1"), (2, 0, "conv2d_s2p0")):
        x = rand(2, 3, 6, 6)
        w = rand(4, 3, 3, 3)
        b = rand(4)
        oh = (6 + 2 * padding - 3) // stride + 1
        proj = rand(2, 4, oh, oh)
        results.append(_check_inputs(
            tag, lambda t, s=stride, p=padding, pr=proj: _projected(layers.conv2d(t[0], t[1], t[2], s, p), pr),
            [x, w, b]))

    # relu away from the kink
    x = rand(4, 7)
    x[np.abs(x) < 1e-2] += 0.05
    proj = rand(4, 7)
    from .tensor import relu as true_relu
    trelu = _sabotaged_relu if sabotage_relu else true_relu
    results.append(_check_inputs("relu", lambda t: _projected(trelu(t[0]), proj), [x]))

    # maxpool away from ties
    x = rand(2, 3, 6, 6) + np.linspace(0, 1, 2 * 3 * 36).reshape(2, 3, 6, 6).astype(dtype)
    proj = rand(2, 3, 3, 3)
    results.append(_check_inputs("maxpool2d", lambda t: _projected(layers.maxpool2d(t[0], 2), proj), [x]))

    # global average pool
    x = rand(2, 4, 5, 5)
    proj = rand(2, 4)
    results.append(_check_inputs("gap", lambda t: _projected(layers.global_avg_pool(t[0]), proj), [x]))

    # roi align over a random interior box
    x = rand(2, 3, 8, 8)
    roi = RoiSpec(0.1, 0.2, 0.7, 0.9, spatial_scale=0.25, sampling_ratio=2)
    proj = rand(2, 3)
    results.append(_check_inputs("roi_align_1x1", lambda t: _projected(roi_align_1x1(t[0], roi), proj), [x]))

    # cross-entropy with a soft target
    logits = rand(4, 6)
    target = softmax(rand(4, 6).astype(np.float64)).astype(dtype)
    results.append(_check_inputs("softmax_cross_entropy",
                                 lambda t: softmax_cross_entropy(t[0], target), [logits]))

    # KL against fixed target probabilities
    logits = rand(4, 6)
    q = softmax(rand(4, 6).astype(np.float64)).astype(dtype)
    results.append(_check_inputs("kl_divergence", lambda t: kl_div_with_logits(q, t[0]), [logits]))

    # full model end to end, gradients on every parameter
    model = layers.build_tiny_cnn(3, np.random.default_rng(7), input_size=8,
                                  dtype=dtype, channels=(4, 5, 6))
    images = rand(2, 3, 8, 8)
    target = softmax(rand(2, 3).astype(np.float64)).astype(dtype)

    def model_loss(params_override=None):
        fmap, logits = model.forward(Tensor(images))
        return softmax_cross_entropy(logits, target)

    loss = model_loss()
    loss.backward()
    worst = 0.0
    for _, p in model.named_parameters(include_roi_head=False):
        analytic = p.grad.copy()
        numeric = finite_difference(lambda _x, _p=p: model_loss().item(), p.data, DEFAULT_EPS)
        worst = max(worst, max_rel_error(analytic, numeric))
    results.append(CheckResult("tiny_cnn_end_to_end", worst, DEFAULT_TOL))
    return results


def format_report(results: list[CheckResult]) -> str:
    lines = []
    for r in results:
        status = "ok" if r.passed else "FAIL"
        lines.append(f"{r.name:<24s} max_rel_err={r.max_rel_error:.3e}  tol={r.tolerance:.0e}  {status}")
    return "\n".join(lines)
