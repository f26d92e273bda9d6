"""Layers for a small convolutional classifier: conv, pool, relu, GAP, linear.

Every layer exposes ``__call__(Tensor) -> Tensor`` (building the backward
graph), ``parameters()`` and ``output_shape(input_shape)`` so output shapes
can be computed statically. Convolution runs as an im2col matmul; the column
matrix is cached on the graph for the backward pass.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, ShapeError, _accum, add, matmul


# -- functional ops ---------------------------------------------------------

def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2D convolution, NCHW. weight (Cout, Cin, kh, kw), bias (Cout,)."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects (B,C,H,W), got {x.shape}")
    b, cin, h, w = x.shape
    cout, cin_w, kh, kw = weight.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d input has {cin} channels, weight expects {cin_w}")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d output would be {oh}x{ow} for input {h}x{w}, kernel {kh}x{kw}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    # (B, Cin, OH, OW, kh, kw) -> (B*OH*OW, Cin*kh*kw)
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(b * oh * ow, cin * kh * kw)
    wmat = weight.data.reshape(cout, -1)
    out_data = (cols @ wmat.T + bias.data).reshape(b, oh, ow, cout).transpose(0, 3, 1, 2)
    out_data = np.ascontiguousarray(out_data)

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(b * oh * ow, cout)
        _accum(weight, (gmat.T @ cols).reshape(weight.data.shape))
        _accum(bias, gmat.sum(axis=0))
        if x.requires_grad:
            dcols = (gmat @ wmat).reshape(b, oh, ow, cin, kh, kw)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + oh * stride:stride, j:j + ow * stride:stride] += \
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            if padding:
                dxp = dxp[:, :, padding:h + padding, padding:w + padding]
            _accum(x, dxp)

    return Tensor._make(out_data, (x, weight, bias), backward)


def maxpool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pool, stride == size; extents must divide evenly."""
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d expects (B,C,H,W), got {x.shape}")
    b, c, h, w = x.shape
    if h % size or w % size:
        raise ShapeError(f"maxpool2d size {size} does not divide input {h}x{w}")
    oh, ow = h // size, w // size
    tiles = x.data.reshape(b, c, oh, size, ow, size)
    flat = tiles.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, oh, ow, size * size)
    arg = flat.argmax(axis=4)
    out_data = np.take_along_axis(flat, arg[..., None], axis=4)[..., 0]

    def backward(g):
        dflat = np.zeros_like(flat)
        np.put_along_axis(dflat, arg[..., None], g[..., None], axis=4)
        dx = dflat.reshape(b, c, oh, ow, size, size).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)
        _accum(x, dx)

    return Tensor._make(out_data, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, C), spatial mean per channel."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects (B,C,H,W), got {x.shape}")
    b, c, h, w = x.shape
    out_data = x.data.mean(axis=(2, 3))

    def backward(g):
        _accum(x, np.broadcast_to(g[:, :, None, None] / (h * w), x.data.shape).copy())

    return Tensor._make(out_data, (x,), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """y = x @ W.T + b. weight (out_features, in_features)."""
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear expects (B,{weight.shape[1]}), got {x.shape}")
    return add(matmul(x, Tensor._make(weight.data.T, (weight,),
                                      lambda g: _accum(weight, g.T))), bias)


# -- layer classes ----------------------------------------------------------

class Layer:
    kind = "identity"

    def __call__(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def parameters(self) -> list[Tensor]:
        return []

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return []

    def output_shape(self, input_shape: tuple) -> tuple:
        return tuple(input_shape)


class Identity(Layer):
    kind = "identity"

    def __call__(self, x: Tensor) -> Tensor:
        return x


class ReLU(Layer):
    kind = "relu"

    def __call__(self, x: Tensor) -> Tensor:
        from .tensor import relu
        return relu(x)


class MaxPool2d(Layer):
    kind = "maxpool2d"

    def __init__(self, size: int = 2):
        self.size = size

    def __call__(self, x: Tensor) -> Tensor:
        return maxpool2d(x, self.size)

    def output_shape(self, input_shape):
        b, c, h, w = input_shape
        return (b, c, h // self.size, w // self.size)


class GlobalAvgPool(Layer):
    kind = "gap"

    def __call__(self, x: Tensor) -> Tensor:
        return global_avg_pool(x)

    def output_shape(self, input_shape):
        b, c, _, _ = input_shape
        return (b, c)


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3,
                 stride: int = 1, padding: int = 0, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        rng = rng or np.random.default_rng()
        fan_in = in_channels * kernel_size * kernel_size
        scale = np.sqrt(2.0 / fan_in)
        self.weight = Tensor(
            (rng.standard_normal((out_channels, in_channels, kernel_size, kernel_size)) * scale).astype(dtype),
            requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True)
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def parameters(self):
        return [self.weight, self.bias]

    def named_parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def output_shape(self, input_shape):
        b, _, h, w = input_shape
        cout, _, kh, kw = self.weight.shape
        oh = (h + 2 * self.padding - kh) // self.stride + 1
        ow = (w + 2 * self.padding - kw) // self.stride + 1
        return (b, cout, oh, ow)


class Linear(Layer):
    kind = "linear"

    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng or np.random.default_rng()
        scale = np.sqrt(2.0 / in_features)
        self.weight = Tensor((rng.standard_normal((out_features, in_features)) * scale).astype(dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)

    def parameters(self):
        return [self.weight, self.bias]

    def named_parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def output_shape(self, input_shape):
        return (input_shape[0], self.weight.shape[0])


class Sequential(Layer):
    kind = "sequential"

    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def named_parameters(self):
        return [(f"{i}.{name}", p)
                for i, layer in enumerate(self.layers)
                for name, p in layer.named_parameters()]

    def output_shape(self, input_shape):
        for layer in self.layers:
            input_shape = layer.output_shape(input_shape)
        return tuple(input_shape)


class ClassifierNet:
    """Backbone -> spatial feature map -> GAP -> linear head.

    A second, independently initialized linear head serves region-pooled
    features during training; it is dropped from deployment checkpoints.
    One training loop owns an instance exclusively; frozen inference is
    thread-safe.
    """

    def __init__(self, backbone: Sequential, head: Linear, roi_head: Linear, input_size: int):
        self.backbone = backbone
        self.head = head
        self.roi_head = roi_head
        self.input_size = input_size

    def forward(self, images) -> tuple[Tensor, Tensor]:
        """Return (pre-GAP feature map, class logits) for a (B,C,H,W) batch."""
        x = images if isinstance(images, Tensor) else Tensor(images)
        feature_map = self.backbone(x)
        logits = self.head(global_avg_pool(feature_map))
        return feature_map, logits

    def feature_shape(self, batch: int = 1) -> tuple:
        return self.backbone.output_shape((batch, 3, self.input_size, self.input_size))

    @property
    def spatial_scale(self) -> float:
        return self.feature_shape()[2] / self.input_size

    def parameters(self, include_roi_head: bool = True) -> list[Tensor]:
        params = self.backbone.parameters() + self.head.parameters()
        if include_roi_head:
            params += self.roi_head.parameters()
        return params

    def named_parameters(self, include_roi_head: bool = True) -> list[tuple[str, Tensor]]:
        named = [(f"backbone.{n}", p) for n, p in self.backbone.named_parameters()]
        named += [(f"head.{n}", p) for n, p in self.head.named_parameters()]
        if include_roi_head:
            named += [(f"roi_head.{n}", p) for n, p in self.roi_head.named_parameters()]
        return named


def build_tiny_cnn(num_classes: int, rng: np.random.Generator, input_size: int = 32,
                   dtype=np.float32, channels: tuple[int, int, int] = (32, 64, 128)) -> ClassifierNet:
    """Three conv blocks ending in an (input_size/4)^2 feature map.

    The roi head draws from its own rng stream so that backbone and head
    parameters are identical whether or not the roi head is ever used.
    """
    c1, c2, c3 = channels
    roi_rng = rng.spawn(1)[0]
    backbone = Sequential([
        Conv2d(3, c1, 3, padding=1, rng=rng, dtype=dtype),
        ReLU(),
        MaxPool2d(2),
        Conv2d(c1, c2, 3, padding=1, rng=rng, dtype=dtype),
        ReLU(),
        MaxPool2d(2),
        Conv2d(c2, c3, 3, padding=1, rng=rng, dtype=dtype),
        ReLU(),
    ])
    head = Linear(c3, num_classes, rng=rng, dtype=dtype)
    roi_head = Linear(c3, num_classes, rng=roi_rng, dtype=dtype)
    return ClassifierNet(backbone, head, roi_head, input_size)
