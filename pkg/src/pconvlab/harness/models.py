"""Toy segmentation and box-regression networks with a swappable two-layer stem."""
from __future__ import annotations

import numpy as np

from ..autograd import ops
from ..autograd.ops import ConvSpec
from ..autograd.tensor import Tensor
from ..nn import Conv2d, Module, Parameter, conv_bn_act, kaiming_uniform
from ..pconv import swap_first_layers


def _shape_probe(net, x_shape) -> list[tuple]:
    x = Tensor(np.zeros(x_shape))
    shapes = []
    training = net.training
    net.eval()
    for layer in net.stem:
        x = layer(x)
        shapes.append(x.shape)
    net.train(training)
    return shapes


class _StemNet(Module):
    def _build_stem(self, stem: str, ks, rng) -> None:
        swap_first_layers(self, stem, ks, rng)

    def swap_stem(self, stem: str, ks=(3, 3), rng=None) -> None:
        """Swap stem layers, asserting every downstream shape is unchanged."""
        probe = (1, self.in_channels, self.stem_stride, self.stem_stride)
        before = _shape_probe(self, probe)
        swap_first_layers(self, stem, ks, rng if rng is not None else np.random.default_rng(0))
        after = _shape_probe(self, probe)
        if before != after:
            raise AssertionError(f"stem swap changed shapes {before} -> {after}")

    @property
    def stem_stride(self) -> int:
        return int(np.prod([s for _, _, s in self.stem_io]))

    def descriptor(self) -> dict:
        return {"model": self.kind, "stem": self.stem_kind, "stem_ks": list(self.stem_ks), "width": self.width}


class SegNet(_StemNet):
    """Two stride-2 stem layers, two 3x3 blocks, a two-step skip decoder, sigmoid head."""

    kind = "segnet"

    def __init__(self, stem: str = "conv", ks=(3, 3), width: int = 8, rng=None, in_channels: int = 1):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels = in_channels
        self.width = width
        self.stem_io = [(in_channels, width, 2), (width, 2 * width, 2)]
        self._build_stem(stem, ks, rng)
        self.body = [conv_bn_act(2 * width, 2 * width, 3, 1, rng) for _ in range(2)]
        self.up1 = conv_bn_act(2 * width + width, width, 3, 1, rng)
        self.up2 = conv_bn_act(width + in_channels, width, 3, 1, rng)
        self.head = Conv2d(ConvSpec(width, 1, 1, 1, bias=True), rng)
        # start from a low foreground prior; targets cover a few percent of pixels
        self.head.bias.data[...] = -2.0

    def logits(self, x: Tensor) -> Tensor:
        s1 = self.stem[0](x)
        f = self.stem[1](s1)
        for blk in self.body:
            f = blk(f)
        f = self.up1(ops.concat_channels([ops.upsample_nearest2d(f), s1]))
        f = self.up2(ops.concat_channels([ops.upsample_nearest2d(f), x]))
        return self.head(f)

    def forward(self, x: Tensor) -> Tensor:
        h, w = x.shape[2:]
        if h % self.stem_stride or w % self.stem_stride:
            raise ValueError(f"input {h}x{w} must be divisible by {self.stem_stride}")
        return ops.sigmoid(self.logits(x))


class BoxNet(_StemNet):
    """Stem, three 3x3 blocks, then spatial-softmax pooling into one box.

    The pooled weights give the box centre as an expected cell position, so
    the centre always lies inside the image. Width and height come from the
    attention-pooled features through a sigmoid scaled by ``max_size``; the
    box is therefore valid by construction. The confidence is the peak
    pooling weight.
    """

    kind = "boxnet"

    def __init__(self, stem: str = "conv", ks=(3, 3), width: int = 8, rng=None, in_channels: int = 1,
                 max_size: float = 16.0):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels = in_channels
        self.width = width
        self.max_size = float(max_size)
        c = 2 * width
        self.stem_io = [(in_channels, width, 2), (width, c, 2)]
        self._build_stem(stem, ks, rng)
        self.body = [conv_bn_act(c, c, 3, 1, rng) for _ in range(3)]
        self.attend = Conv2d(ConvSpec(c, 1, 1, 1, bias=True), rng)
        self.size_w = Parameter(kaiming_uniform(rng, (2, c)).T.copy())
        self.size_b = Parameter(np.zeros(2))

    def heads(self, x: Tensor):
        f = self.stem[1](self.stem[0](x))
        for blk in self.body:
            f = blk(f)
        n, c, fh, fw = f.shape
        stride_y = x.shape[2] / fh
        stride_x = x.shape[3] / fw
        weights = ops.softmax(self.attend(f).reshape((n, fh * fw)), axis=1)
        ys, xs = np.indices((fh, fw))
        cx = ops.matmul(weights, Tensor(((xs.reshape(-1, 1) + 0.5) * stride_x)))
        cy = ops.matmul(weights, Tensor(((ys.reshape(-1, 1) + 0.5) * stride_y)))
        pooled = (f.reshape((n, c, fh * fw)) * weights.reshape((n, 1, fh * fw))).sum(axis=2)
        size = ops.sigmoid(ops.matmul(pooled, self.size_w) + self.size_b) * self.max_size
        return cx, cy, size, weights

    def forward(self, x: Tensor) -> Tensor:
        """Boxes (N, 4) in corner format, image-pixel units."""
        cx, cy, size, _ = self.heads(x)
        half_w = size[:, 0:1] * 0.5
        half_h = size[:, 1:2] * 0.5
        return ops.concat([cx - half_w, cy - half_h, cx + half_w, cy + half_h], axis=1)

    def predict(self, x: Tensor):
        cx, cy, size, weights = self.heads(x)
        half = size.data * 0.5
        boxes = np.concatenate([cx.data - half[:, :1], cy.data - half[:, 1:], cx.data + half[:, :1],
                                cy.data + half[:, 1:]], axis=1)
        conf = weights.data.max(axis=1)
        return boxes, conf


MODELS = {"segnet": SegNet, "boxnet": BoxNet}


def build_model(kind: str, stem: str = "conv", ks=(3, 3), width: int = 8, seed: int = 0) -> _StemNet:
    if kind not in MODELS:
        raise ValueError(f"unknown model {kind!r}; choose from {sorted(MODELS)}")
    return MODELS[kind](stem=stem, ks=tuple(ks), width=width, rng=np.random.default_rng(seed))
