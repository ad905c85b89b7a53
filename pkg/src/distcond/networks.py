"""ConvNet construction, forward views, parameter interpolation, and SGD.

The architecture is a stack of identical blocks (3x3 conv, instance norm,
ReLU, 3x3/stride-2 average pool) followed by one linear head. The
headless trunk is the "encoder" view; encoder plus head is the
"classifier" view.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError
from .rng import substream

CONV_KERNEL = 3
CONV_PAD = 1
POOL_KERNEL = 3
POOL_STRIDE = 2
POOL_PAD = 1


@dataclass(frozen=True)
class ConvNetSpec:
    """Architecture descriptor; two ParamSets are combinable iff these match."""

    depth: int
    width: int
    in_channels: int
    height: int
    width_px: int
    num_classes: int

    def __post_init__(self):
        if self.depth < 1 or self.width < 1 or self.num_classes < 1:
            raise ShapeError("ConvNetSpec: depth, width, num_classes must be positive")

    def spatial_after(self, blocks: Optional[int] = None) -> Tuple[int, int]:
        blocks = self.depth if blocks is None else blocks
        h, w = self.height, self.width_px
        for _ in range(blocks):
            h = math.ceil(h / 2)
            w = math.ceil(w / 2)
        return h, w

    @property
    def feature_dim(self) -> int:
        h, w = self.spatial_after()
        return self.width * h * w


@dataclass
class ParamSet:
    """Ordered named parameter tensors for one network."""

    spec: ConvNetSpec
    tensors: Dict[str, Tensor] = field(default_factory=dict)

    def names(self):
        return list(self.tensors.keys())

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self.tensors.items())

    def copy(self) -> "ParamSet":
        return ParamSet(self.spec, {n: Tensor(t.data.copy(), requires_grad=t.requires_grad) for n, t in self.tensors.items()})

    def astype(self, dtype) -> "ParamSet":
        return ParamSet(self.spec, {n: t.astype(dtype) for n, t in self.tensors.items()})

    def set_requires_grad(self, flag: bool) -> "ParamSet":
        for t in self.tensors.values():
            t.requires_grad = flag
        return self

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def allclose(self, other: "ParamSet", rtol=1e-6, atol=1e-7) -> bool:
        return self.spec == other.spec and all(
            np.allclose(t.data, other.tensors[n].data, rtol=rtol, atol=atol)
            for n, t in self.tensors.items()
        )


def _check_combinable(a: ParamSet, b: ParamSet) -> None:
    if a.spec != b.spec:
        raise ShapeError(f"parameter sets have different descriptors: {a.spec} vs {b.spec}")
    if a.names() != b.names():
        raise ShapeError("parameter sets have different tensor names")
    for n, t in a.items():
        if t.shape != b.tensors[n].shape:
            raise ShapeError(f"tensor {n!r} shape mismatch: {t.shape} vs {b.tensors[n].shape}")


def build_convnet(spec: ConvNetSpec, seed: int, dtype=np.float32) -> ParamSet:
    """Initialize a fresh network: fan-in-scaled normal weights, zero biases."""
    rng = substream(int(seed), "net-init") if isinstance(seed, (int, np.integer)) else seed
    tensors: Dict[str, Tensor] = {}
    c_in = spec.in_channels
    for d in range(spec.depth):
        fan_in = c_in * CONV_KERNEL * CONV_KERNEL
        std = math.sqrt(2.0 / fan_in)
        w = rng.standard_normal((spec.width, c_in, CONV_KERNEL, CONV_KERNEL)) * std
        tensors[f"block{d}.conv.weight"] = Tensor(w.astype(dtype))
        tensors[f"block{d}.conv.bias"] = Tensor(np.zeros(spec.width, dtype=dtype))
        tensors[f"block{d}.norm.gain"] = Tensor(np.ones(spec.width, dtype=dtype))
        tensors[f"block{d}.norm.shift"] = Tensor(np.zeros(spec.width, dtype=dtype))
        c_in = spec.width
    fdim = spec.feature_dim
    std = math.sqrt(2.0 / fdim)
    hw = rng.standard_normal((spec.num_classes, fdim)) * std
    tensors["head.weight"] = Tensor(hw.astype(dtype))
    tensors["head.bias"] = Tensor(np.zeros(spec.num_classes, dtype=dtype))
    return ParamSet(spec, tensors)


def encoder_forward(params: ParamSet, images: Tensor) -> Tensor:
    """Flattened post-pool features of the last block (no classifier head)."""
    spec = params.spec
    if images.ndim != 4 or images.shape[1:] != (spec.in_channels, spec.height, spec.width_px):
        raise ShapeError(
            f"encoder_forward: images {images.shape} do not match descriptor "
            f"(C={spec.in_channels}, H={spec.height}, W={spec.width_px})"
        )
    x = images
    for d in range(spec.depth):
        x = ad.conv2d(x, params[f"block{d}.conv.weight"], params[f"block{d}.conv.bias"],
                      stride=1, padding=CONV_PAD)
        x = ad.instance_norm(x, params[f"block{d}.norm.gain"], params[f"block{d}.norm.shift"])
        x = ad.relu(x)
        x = ad.avg_pool2d(x, POOL_KERNEL, POOL_STRIDE, POOL_PAD)
    return ad.reshape(x, (images.shape[0], spec.feature_dim))


def classifier_forward(params: ParamSet, images: Tensor) -> Tensor:
    feats = encoder_forward(params, images)
    return ad.linear(feats, params["head.weight"], params["head.bias"])


def interpolate_params(init: ParamSet, expert: ParamSet, lam: float) -> ParamSet:
    """Element-wise lam*init + (1-lam)*expert over every named tensor.

    Endpoints return exact copies so lam in {0, 1} is bit-equal to the
    respective checkpoint.
    """
    if not 0.0 <= lam <= 1.0:
        raise ShapeError(f"interpolation coefficient must be in [0, 1], got {lam}")
    _check_combinable(init, expert)
    if lam == 1.0:
        return init.copy().set_requires_grad(False)
    if lam == 0.0:
        return expert.copy().set_requires_grad(False)
    dt = init.dtype.type
    a, b = dt(lam), dt(1.0 - lam)
    out = {n: Tensor(a * t.data + b * expert.tensors[n].data) for n, t in init.items()}
    return ParamSet(init.spec, out)


def sgd_momentum_step(
    params: ParamSet,
    grads: Dict[str, np.ndarray],
    lr: float,
    momentum: float,
    weight_decay: float,
    state: Dict[str, np.ndarray],
) -> None:
    """In-place SGD update: v <- m*v + g + wd*p; p <- p - lr*v."""
    for n, t in params.items():
        g = grads.get(n)
        if g is None:
            continue
        if g.shape != t.shape:
            raise ShapeError(f"gradient for {n!r} has shape {g.shape}, expected {t.shape}")
        dt = t.dtype.type
        v = state.get(n)
        if v is None:
            v = np.zeros_like(t.data)
            state[n] = v
        v *= dt(momentum)
        v += g
        if weight_decay:
            v += dt(weight_decay) * t.data
        t.data -= dt(lr) * v


def classification_accuracy(
    params: ParamSet, images: np.ndarray, labels: np.ndarray, batch: int = 512
) -> float:
    """Argmax-logit accuracy; ties resolve to the lower class index."""
    if images.shape[0] == 0:
        raise ShapeError("cannot compute accuracy on an empty set")
    hits = 0
    with ad.pause_recording():
        for s in range(0, images.shape[0], batch):
            x = Tensor(images[s : s + batch].astype(params.dtype, copy=False))
            logits = classifier_forward(params, x)
            hits += int((np.argmax(logits.data, axis=1) == labels[s : s + batch]).sum())
    return hits / images.shape[0]


class SGDMomentum:
    """Stateful wrapper over sgd_momentum_step reading grads from tensors."""

    def __init__(self, params: ParamSet, lr: float, momentum: float = 0.9,
                 weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.state: Dict[str, np.ndarray] = {}

    def step(self) -> None:
        grads = {n: t.grad for n, t in self.params.items() if t.grad is not None}
        sgd_momentum_step(self.params, grads, self.lr, self.momentum,
                          self.weight_decay, self.state)

    def zero_grad(self) -> None:
        self.params.zero_grad()
