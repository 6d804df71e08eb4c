"""Pinwheel-shaped convolution and its analyzers.

The layer runs four asymmetric-padding strip convolutions in parallel, each
followed by BN and SiLU, concatenates them along channels and fuses the result
with a 2x2 unpadded convolution (+BN+SiLU). With fan-leaf length ``k`` the four
branches are, as (left, right, top, bottom) pads and (kh, kw) kernels::

    (1, 0, 0, k)  (k, 1)   vertical strip, extra rows below
    (0, k, 0, 1)  (1, k)   horizontal strip, extra cols right
    (0, 1, k, 0)  (k, 1)   vertical strip, extra rows above
    (k, 0, 1, 0)  (1, k)   horizontal strip, extra cols left

Each branch maps (h, w) to (h/s + 1, w/s + 1); the 2x2 fusion brings it back
to (h/s, w/s), so the layer is a drop-in replacement for a 3x3 stride-s conv.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .autograd import ops
from .autograd.ops import ConvSpec, PadSpec
from .autograd.tensor import Tensor
from .nn import ConvBNAct, Module


@dataclass(frozen=True)
class PConvSpec:
    c1: int
    c2: int
    k: int = 3
    s: int = 1

    def __post_init__(self):
        if self.c2 % 4:
            raise ValueError(f"c2={self.c2} must be divisible by 4")
        if self.k < 2:
            raise ValueError(f"fan-leaf length k={self.k} must be >= 2")
        if self.s < 1 or self.c1 < 1:
            raise ValueError("c1 and s must be >= 1")

    @property
    def branch_channels(self) -> int:
        return self.c2 // 4

    def branches(self) -> list["BranchSpec"]:
        k = self.k
        return [
            BranchSpec("vertical", PadSpec(1, 0, 0, k)),
            BranchSpec("horizontal", PadSpec(0, k, 0, 1)),
            BranchSpec("vertical", PadSpec(0, 1, k, 0)),
            BranchSpec("horizontal", PadSpec(k, 0, 1, 0)),
        ]

    def branch_conv_specs(self) -> list[ConvSpec]:
        out = []
        for b in self.branches():
            kh, kw = b.kernel_hw(self.k)
            out.append(ConvSpec(self.c1, self.branch_channels, kh, kw, stride=self.s, pad=b.pad))
        return out

    def fusion_conv_spec(self) -> ConvSpec:
        return ConvSpec(self.c2, self.c2, 2, 2, stride=1, pad=PadSpec())


@dataclass(frozen=True)
class ConvBlockSpec:
    """The baseline stem layer: 3x3 (or kxk) conv, symmetric pad k//2, BN, SiLU."""

    c1: int
    c2: int
    s: int = 1
    k: int = 3

    def conv_spec(self) -> ConvSpec:
        return ConvSpec(self.c1, self.c2, self.k, self.k, stride=self.s, pad=PadSpec.of(self.k // 2))


@dataclass(frozen=True)
class BranchSpec:
    orientation: str  # "vertical": k tall, 1 wide; "horizontal": 1 tall, k wide
    pad: PadSpec

    def kernel_hw(self, k: int) -> tuple[int, int]:
        return (k, 1) if self.orientation == "vertical" else (1, k)

    def check(self, k: int) -> None:
        p = self.pad
        long_axis = (p.top, p.bottom) if self.orientation == "vertical" else (p.left, p.right)
        short_axis = (p.left, p.right) if self.orientation == "vertical" else (p.top, p.bottom)
        if sorted(long_axis) != [0, k] or sorted(short_axis) != [0, 1]:
            raise ValueError(f"branch {self} breaks the pinwheel pad rule for k={k}")


@dataclass
class LayerStats:
    param_count: int
    receptive_field_cells: int
    receptive_extent: tuple[int, int]
    multiplicity: np.ndarray = field(repr=False)


LayerSpec = Union[PConvSpec, ConvBlockSpec]


def _check_divisible(x: Tensor, s: int) -> None:
    h, w = x.shape[2:]
    if h % s or w % s:
        raise ValueError(f"input {h}x{w} not divisible by stride {s}")


class PConv(Module):
    def __init__(self, spec: PConvSpec, rng: np.random.Generator):
        self.spec = spec
        for b in spec.branches():
            b.check(spec.k)
        self.branches = [ConvBNAct(cs, rng) for cs in spec.branch_conv_specs()]
        self.fuse = ConvBNAct(spec.fusion_conv_spec(), rng)

    def pre_fusion(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.spec.c1:
            raise ValueError(f"expected {self.spec.c1} input channels, got {x.shape[1]}")
        _check_divisible(x, self.spec.s)
        return ops.concat_channels([b(x) for b in self.branches])

    def forward(self, x: Tensor) -> Tensor:
        return self.fuse(self.pre_fusion(x))


class ConvBlock(Module):
    def __init__(self, spec: ConvBlockSpec, rng: np.random.Generator):
        self.spec = spec
        self.block = ConvBNAct(spec.conv_spec(), rng)

    def forward(self, x: Tensor) -> Tensor:
        _check_divisible(x, self.spec.s)
        return self.block(x)


def build_layer(spec: LayerSpec, rng: np.random.Generator) -> Module:
    return PConv(spec, rng) if isinstance(spec, PConvSpec) else ConvBlock(spec, rng)


def pconv_forward(x: Tensor, spec: PConvSpec, rng: np.random.Generator | None = None,
                  layer: PConv | None = None) -> Tensor:
    """Functional entry: run ``layer`` (or a freshly initialised one) on ``x``."""
    if layer is None:
        layer = PConv(spec, rng if rng is not None else np.random.default_rng(0))
    return layer(x)


def conv_block_forward(x: Tensor, c1: int, c2: int, s: int, rng: np.random.Generator | None = None) -> Tensor:
    return ConvBlock(ConvBlockSpec(c1, c2, s), rng if rng is not None else np.random.default_rng(0))(x)


def count_params(spec: LayerSpec) -> int:
    """Exact bias-free conv weight count (BN affine parameters excluded)."""
    if isinstance(spec, ConvBlockSpec):
        return spec.c2 * spec.c1 * spec.k * spec.k
    branches = 4 * spec.branch_channels * spec.c1 * spec.k
    fusion = 2 * 2 * spec.c2 * spec.c2
    return branches + fusion


def pconv_param_formula(spec: PConvSpec) -> int:
    """The closed form ``4*(c2/4)*c1*k + 4*c2*c1``.

    Equals :func:`count_params` only when c1 == c2: the fusion kernel sees
    4*(c2/4) = c2 input channels, not c1.
    """
    return 4 * spec.branch_channels * spec.c1 * spec.k + 4 * spec.c2 * spec.c1


def _stage_offsets(cs: ConvSpec) -> list[tuple[int, int]]:
    # input offsets (relative to stride*out position) read by one output cell
    return [(i - cs.pad.top, j - cs.pad.left) for i in range(cs.kernel_h) for j in range(cs.kernel_w)]


def receptive_field(spec: LayerSpec) -> LayerStats:
    """Push one output cell's dependencies back through the layer geometry.

    ``multiplicity`` counts, per input cell, the number of distinct
    (fusion tap, branch tap) paths reaching it.
    """
    influence: dict[tuple[int, int], int] = {}
    if isinstance(spec, ConvBlockSpec):
        for dy, dx in _stage_offsets(spec.conv_spec()):
            influence[(dy, dx)] = influence.get((dy, dx), 0) + 1
    else:
        fusion = spec.fusion_conv_spec()
        s = spec.s
        for cs in spec.branch_conv_specs():
            for fy, fx in _stage_offsets(fusion):
                for dy, dx in _stage_offsets(cs):
                    key = (fy * s + dy, fx * s + dx)
                    influence[key] = influence.get(key, 0) + 1
    ys = [p[0] for p in influence]
    xs = [p[1] for p in influence]
    y0, x0 = min(ys), min(xs)
    extent = (max(ys) - y0 + 1, max(xs) - x0 + 1)
    grid = np.zeros(extent, dtype=np.int64)
    for (y, x), m in influence.items():
        grid[y - y0, x - x0] = m
    return LayerStats(count_params(spec), int(np.count_nonzero(grid)), extent, grid)


def swap_first_layers(network, which: str, ks: Sequence[int] = (3, 3), rng: np.random.Generator | None = None):
    """Rebuild the two stem layers of ``network`` as ``conv`` or ``pconv``.

    ``network`` must expose ``stem`` (list of layers) and ``stem_io`` (list of
    (c1, c2, s)). Shapes downstream are unchanged by construction.
    """
    if which not in ("conv", "pconv"):
        raise ValueError(f"stem kind must be 'conv' or 'pconv', got {which!r}")
    rng = rng if rng is not None else np.random.default_rng(0)
    ks = list(ks)
    if len(ks) != len(network.stem_io):
        raise ValueError(f"need one k per stem layer ({len(network.stem_io)}), got {ks}")
    specs = []
    for (c1, c2, s), k in zip(network.stem_io, ks):
        specs.append(PConvSpec(c1, c2, k, s) if which == "pconv" else ConvBlockSpec(c1, c2, s))
    network.stem = [build_layer(sp, rng) for sp in specs]
    network.stem_kind = which
    network.stem_ks = tuple(ks) if which == "pconv" else (3,) * len(ks)
    return network
