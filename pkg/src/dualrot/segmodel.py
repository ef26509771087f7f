"""Tiny encoder-decoder producing a per-pixel foreground probability.

Layout (all 3x3 convs padded by 1, leaky rectifier slope 0.1)::

    conv 3->16 | conv/2 16->32 | conv/2 32->64 | conv 64->64
    up x2, conv 64->32 | up x2, conv 32->16 | conv1x1 16->1, sigmoid
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import gradcore as gc
from .gradcore import Tensor

LEAK = 0.1

# (name, in, out, kernel, stride, upsample-before)
ARCH = (
    ("enc1", 3, 16, 3, 1, 1),
    ("down1", 16, 32, 3, 2, 1),
    ("down2", 32, 64, 3, 2, 1),
    ("mid", 64, 64, 3, 1, 1),
    ("up1", 64, 32, 3, 1, 2),
    ("up2", 32, 16, 3, 1, 2),
    ("head", 16, 1, 1, 1, 1),
)


@dataclass
class ModelParams:
    names: list[str] = field(default_factory=list)
    tensors: list[Tensor] = field(default_factory=list)

    def __iter__(self):
        return iter(zip(self.names, self.tensors))

    def __len__(self):
        return len(self.tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[self.names.index(name)]

    def arrays(self) -> list[np.ndarray]:
        return [t.data for t in self.tensors]

    def count(self) -> int:
        return int(sum(t.size for t in self.tensors))

    def copy(self, requires_grad: bool | None = None) -> "ModelParams":
        return ModelParams(
            list(self.names),
            [Tensor(t.data.copy(), t.requires_grad if requires_grad is None else requires_grad) for t in self.tensors],
        )

    def aligned_with(self, other: "ModelParams") -> bool:
        return self.names == other.names and all(a.shape == b.shape for a, b in zip(self.tensors, other.tensors))


def parameter_count() -> int:
    return sum(cout * cin * k * k + cout for _, cin, cout, k, _, _ in ARCH)


def init(seed: int, zero_head: bool = False) -> ModelParams:
    """He-uniform kernels (bound sqrt(6/fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    params = ModelParams()
    for name, cin, cout, k, _, _ in ARCH:
        bound = math.sqrt(6.0 / (cin * k * k))
        w = rng.uniform(-bound, bound, size=(cout, cin, k, k))
        if zero_head and name == "head":
            w[:] = 0.0
        params.names += [f"{name}.weight", f"{name}.bias"]
        params.tensors += [Tensor(w, requires_grad=True), Tensor(np.zeros(cout), requires_grad=True)]
    return params


def forward(params: ModelParams, image) -> Tensor:
    """Map ``[N,3,H,W]`` images to ``[N,H,W]`` probabilities."""
    x = gc.as_tensor(image)
    if x.ndim != 4 or x.shape[1] != ARCH[0][1]:
        raise ValueError(f"expected [N,{ARCH[0][1]},H,W] input, got {x.shape}")
    n, _, h, w = x.shape
    if h % 4 or w % 4:
        raise ValueError(f"spatial dims must be divisible by 4, got {h}x{w}")
    tensors = params.tensors
    for idx, (name, _, _, k, stride, up) in enumerate(ARCH):
        if up > 1:
            x = gc.upsample_nearest(x, up)
        x = gc.conv2d(x, tensors[2 * idx], tensors[2 * idx + 1], stride=stride, padding=k // 2)
        if name != "head":
            x = gc.relu(x, LEAK)
    return gc.reshape(gc.sigmoid(x), (n, h, w))


def predict(params: ModelParams, images) -> np.ndarray:
    with gc.no_grad():
        return forward(params, images).data
