"""The synthetic-set representation and the condensation loops.

A synthetic set is a block of learnable per-class canvases. With factor
l > 1 each canvas is an l x l grid of mini-images that are bilinearly
up-sampled to full resolution whenever the set is used, multiplying the
effective example count by l^2.

Two optimizers over the canvas pixels are provided: plain distribution
matching under fresh random encoders, and the dual-view loop that matches
under sampled middle encoders and periodically pulls the pixels back into
their class region with an expert's cross-entropy.
"""

import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from . import _binio as bio
from . import autodiff as ad
from .autodiff import Tensor
from .data import RealDataset, sample_class_batch
from .errors import FormatError, NumericError, ShapeError
from .experts import ExpertBank, sample_middle_encoder
from .networks import ConvNetSpec, ParamSet, build_convnet, classifier_forward, encoder_forward
from .rng import substream

SYNSET_MAGIC = b"DCDS"
SYNSET_VERSION = 1


@dataclass
class AugmentSwitches:
    color: bool = False
    crop: bool = False
    crop_pad: int = 4

    @property
    def any(self) -> bool:
        return self.color or self.crop


@dataclass
class SyntheticSet:
    canvases: Tensor  # (K*ipc, C, H, W)
    labels: np.ndarray  # (K*ipc,), class-sorted, fixed
    num_classes: int
    ipc: int
    factor: int
    mean: np.ndarray  # (C,) export stats inherited from the source dataset
    std: np.ndarray

    @property
    def per_class_examples(self) -> int:
        return self.ipc * self.factor * self.factor

    @property
    def total_examples(self) -> int:
        return self.num_classes * self.per_class_examples

    def class_slice(self, c: int) -> slice:
        return slice(c * self.ipc, (c + 1) * self.ipc)


@dataclass
class CondenseConfig:
    iterations: int
    ipc: int = 10
    factor: int = 2
    pixel_lr: float = 0.01
    pixel_momentum: float = 0.9
    calib_interval: int = 1
    calib_steps: int = 1
    real_batch: int = 128
    augment: AugmentSwitches = field(default_factory=AugmentSwitches)
    seed: int = 0
    checkpoint_every: int = 0
    checkpoint_path: Optional[str] = None

    def __post_init__(self):
        if self.iterations < 1 or self.calib_interval < 1 or self.calib_steps < 0:
            raise ShapeError("need iterations >= 1, calib_interval >= 1, calib_steps >= 0")
        if self.pixel_lr < 0 or self.ipc < 1 or self.factor < 1 or self.real_batch < 1:
            raise ShapeError("need pixel_lr >= 0, ipc >= 1, factor >= 1, real_batch >= 1")


@dataclass
class ProgressRecord:
    iteration: int
    loss_match: float
    loss_calib: Optional[float]
    lam: Optional[float]
    expert_n: Optional[int]
    ms: float


def effective_pixel_lr(base_lr: float, ipc: int) -> float:
    """Pixel learning rate scaled by images per class."""
    return base_lr * ipc


class _PixelSGD:
    """Momentum SGD on the canvas pixels; state persists across both the
    matching and calibration updates."""

    def __init__(self, canvases: Tensor, lr: float, momentum: float):
        self.canvases = canvases
        self.lr = canvases.dtype.type(lr)
        self.momentum = canvases.dtype.type(momentum)
        self.velocity = np.zeros_like(canvases.data)

    def step(self) -> None:
        g = self.canvases.grad
        if g is None:
            raise ShapeError("pixel step without a gradient")
        self.velocity *= self.momentum
        self.velocity += g
        self.canvases.data -= self.lr * self.velocity
        self.canvases.grad = None


def init_synthetic(dataset: RealDataset, ipc: int, factor: int, seed: int) -> SyntheticSet:
    """Fill every grid cell with an average-pooled randomly selected real
    image of the right class (without replacement until the class runs out)."""
    h, w = dataset.resolution
    if h % factor or w % factor:
        raise ShapeError(f"resolution {h}x{w} not divisible by factor {factor}")
    rng = substream(seed, "synthetic-init")
    k = dataset.num_classes
    c = dataset.channels
    hc, wc = h // factor, w // factor
    canvases = np.empty((k * ipc, c, h, w), dtype=np.float32)
    for cls in range(k):
        idx = dataset.class_index[cls]
        if idx.size == 0:
            raise ShapeError(f"class {cls} has no examples")
        need = ipc * factor * factor
        chosen: List[int] = []
        while len(chosen) < need:
            perm = rng.permutation(idx)
            chosen.extend(perm[: need - len(chosen)].tolist())
        src = dataset.images[np.asarray(chosen)]
        if factor > 1:
            from .kernels import avgpool_forward

            cells = avgpool_forward(src, factor, factor)
        else:
            cells = src
        pos = 0
        for slot in range(ipc):
            for gi in range(factor):
                for gj in range(factor):
                    canvases[cls * ipc + slot, :, gi * hc : (gi + 1) * hc, gj * wc : (gj + 1) * wc] = cells[pos]
                    pos += 1
    labels = np.repeat(np.arange(k), ipc).astype(np.int64)
    return SyntheticSet(
        canvases=Tensor(canvases, requires_grad=True),
        labels=labels,
        num_classes=k,
        ipc=ipc,
        factor=factor,
        mean=dataset.mean.copy(),
        std=dataset.std.copy(),
    )


def unfactor(syn: SyntheticSet, class_c: Optional[int] = None) -> Tuple[Tensor, np.ndarray]:
    """Extract every grid cell and up-sample it to full resolution.

    Rows come out class-contiguous; gradients flow back to the canvases.
    """
    l = syn.factor
    if class_c is None:
        base_labels = np.repeat(np.arange(syn.num_classes), syn.per_class_examples)
        classes = range(syn.num_classes)
    else:
        base_labels = np.full(syn.per_class_examples, class_c)
        classes = [class_c]
    if l == 1:
        if class_c is None:
            return syn.canvases, base_labels.astype(np.int64)
        return ad.narrow(syn.canvases, class_c * syn.ipc, syn.ipc), base_labels.astype(np.int64)
    h, w = syn.canvases.shape[2], syn.canvases.shape[3]
    hc, wc = h // l, w // l
    parts = []
    for cls in classes:
        block = ad.narrow(syn.canvases, cls * syn.ipc, syn.ipc)
        for gi in range(l):
            for gj in range(l):
                parts.append(ad.spatial_slice(block, gi * hc, gj * wc, hc, wc))
    cells = ad.concat(parts, axis=0)
    images = ad.bilinear_upsample(cells, h, w)
    return images, base_labels.astype(np.int64)


@dataclass
class _AugDraw:
    brightness: float = 1.0
    contrast: float = 1.0
    shift: Tuple[int, int] = (0, 0)


def draw_augment(rng: np.random.Generator, switches: AugmentSwitches) -> _AugDraw:
    draw = _AugDraw()
    if switches.color:
        draw.brightness = float(rng.uniform(0.6, 1.4))
        draw.contrast = float(rng.uniform(0.6, 1.4))
    if switches.crop:
        p = switches.crop_pad
        draw.shift = (int(rng.integers(-p, p + 1)), int(rng.integers(-p, p + 1)))
    return draw


def apply_augment(x: Tensor, draw: _AugDraw, switches: AugmentSwitches) -> Tensor:
    """Differentiable brightness/contrast jitter and shifted zero-pad crop."""
    if switches.color:
        x = ad.mul(x, draw.brightness)
        m = ad.mean(x, axes=(1, 2, 3), keepdims=True)
        x = ad.add(ad.mul(x, draw.contrast), ad.mul(m, 1.0 - draw.contrast))
    if switches.crop:
        p = switches.crop_pad
        h, w = x.shape[2], x.shape[3]
        padded = ad.pad2d(x, p)
        x = ad.spatial_slice(padded, p + draw.shift[0], p + draw.shift[1], h, w)
    return x


def shared_augment(
    real_batch: Tensor,
    syn_batch: Tensor,
    rng: np.random.Generator,
    switches: AugmentSwitches,
) -> Tuple[Tensor, Tensor]:
    """One transform draw applied identically to both batches."""
    if not switches.any:
        return real_batch, syn_batch
    if real_batch.shape[1:] != syn_batch.shape[1:]:
        raise ShapeError("real and synthetic batches must share C, H, W")
    draw = draw_augment(rng, switches)
    return apply_augment(real_batch, draw, switches), apply_augment(syn_batch, draw, switches)


def matching_loss(
    encode: Callable[[Tensor], Tensor],
    dataset: RealDataset,
    syn: SyntheticSet,
    batch_per_class: int,
    batch_streams: Dict[int, np.random.Generator],
    aug_stream: Optional[np.random.Generator] = None,
    switches: Optional[AugmentSwitches] = None,
) -> Tensor:
    """Class-wise squared distance between real and synthetic feature means,
    summed over classes. The synthetic side uses all unfactored examples."""
    kcls = syn.num_classes
    batches = [
        sample_class_batch(dataset, c, batch_per_class, batch_streams[c]) for c in range(kcls)
    ]
    real = Tensor(np.concatenate(batches))
    syn_imgs, _ = unfactor(syn)
    if switches is not None and switches.any:
        real, syn_imgs = shared_augment(real, syn_imgs, aug_stream, switches)
    real_f = encode(real)
    syn_f = encode(syn_imgs)
    per = syn.per_class_examples
    loss = None
    for c in range(kcls):
        rc = ad.narrow(real_f, c * batch_per_class, batch_per_class)
        sc = ad.narrow(syn_f, c * per, per)
        d = ad.mean_embedding_sq_dist(rc, sc)
        loss = d if loss is None else ad.add(loss, d)
    return loss


def dm_loss(
    encoder: ParamSet,
    dataset: RealDataset,
    syn: SyntheticSet,
    batch_per_class: int,
    rng: np.random.Generator,
) -> Tensor:
    """Distribution-matching loss under one encoder (class batches drawn
    sequentially from rng)."""
    streams = {c: rng for c in range(syn.num_classes)}
    return matching_loss(
        lambda x: encoder_forward(encoder, x), dataset, syn, batch_per_class, streams
    )


def pltda_loss(
    bank: ExpertBank,
    dataset: RealDataset,
    syn: SyntheticSet,
    batch_per_class: int,
    rng: np.random.Generator,
) -> Tuple[Tensor, int, float]:
    """Matching loss under a freshly sampled middle encoder."""
    mid, n, lam = sample_middle_encoder(bank, rng)
    loss = dm_loss(mid, dataset, syn, batch_per_class, rng)
    return loss, n, lam


def calib_loss(expert: ParamSet, syn: SyntheticSet) -> Tensor:
    """Expert cross-entropy over all unfactored synthetic examples."""
    imgs, labels = unfactor(syn)
    logits = classifier_forward(expert, imgs)
    return ad.softmax_cross_entropy(logits, labels)


def _check_descriptor(spec: ConvNetSpec, dataset: RealDataset) -> None:
    h, w = dataset.resolution
    if (spec.in_channels, spec.height, spec.width_px) != (dataset.channels, h, w):
        raise ShapeError(
            f"network descriptor (C={spec.in_channels}, {spec.height}x{spec.width_px}) "
            f"does not match dataset (C={dataset.channels}, {h}x{w})"
        )
    if spec.num_classes != dataset.num_classes:
        raise ShapeError(
            f"network has {spec.num_classes} classes but dataset has {dataset.num_classes}"
        )


def _maybe_checkpoint(config: CondenseConfig, syn: SyntheticSet, iteration: int) -> None:
    if (
        config.checkpoint_every > 0
        and config.checkpoint_path
        and iteration % config.checkpoint_every == 0
    ):
        save_synthetic(config.checkpoint_path, syn)


def dance_condense(
    config: CondenseConfig,
    dataset: RealDataset,
    bank: ExpertBank,
    progress: Optional[Callable[[ProgressRecord], None]] = None,
    middle_stream: Optional[np.random.Generator] = None,
) -> SyntheticSet:
    """Dual-view loop: per iteration, one pixel update on the matching loss
    under a sampled middle encoder; every calib_interval iterations, pixel
    update(s) on the calibration loss under the expert chosen that
    iteration. `middle_stream` exists so tests can stub the sampling."""
    _check_descriptor(bank.spec, dataset)
    syn = init_synthetic(dataset, config.ipc, config.factor, config.seed)
    opt = _PixelSGD(syn.canvases, effective_pixel_lr(config.pixel_lr, config.ipc),
                    config.pixel_momentum)
    streams = {c: substream(config.seed, f"batch:{c}") for c in range(syn.num_classes)}
    mid_stream = middle_stream if middle_stream is not None else substream(config.seed, "middle")
    aug_stream = substream(config.seed, "augment")

    for i in range(1, config.iterations + 1):
        t0 = time.perf_counter()
        try:
            mid, n, lam = sample_middle_encoder(bank, mid_stream)
            with ad.record():
                loss = matching_loss(
                    lambda x: encoder_forward(mid, x),
                    dataset, syn, config.real_batch, streams, aug_stream, config.augment,
                )
                ad.backward(loss)
            opt.step()
            calib_value = None
            if i % config.calib_interval == 0 and config.calib_steps > 0:
                expert = bank.entries[n - 1].expert
                for _ in range(config.calib_steps):
                    with ad.record():
                        closs = calib_loss(expert, syn)
                        ad.backward(closs)
                    opt.step()
                    calib_value = closs.item()
        except NumericError as err:
            raise NumericError(f"condensation aborted at iteration {i}: {err}") from err
        ms = (time.perf_counter() - t0) * 1e3
        if progress is not None:
            progress(ProgressRecord(i, loss.item(), calib_value, lam, n, ms))
        _maybe_checkpoint(config, syn, i)
    syn.canvases.requires_grad = False
    return syn


def dm_condense(
    config: CondenseConfig,
    dataset: RealDataset,
    spec: ConvNetSpec,
    progress: Optional[Callable[[ProgressRecord], None]] = None,
    encoder_provider: Optional[Callable[[int], ParamSet]] = None,
) -> SyntheticSet:
    """Baseline loop: a fresh randomly initialized encoder every iteration,
    no calibration. `encoder_provider` lets tests pin the encoder."""
    _check_descriptor(spec, dataset)
    syn = init_synthetic(dataset, config.ipc, config.factor, config.seed)
    opt = _PixelSGD(syn.canvases, effective_pixel_lr(config.pixel_lr, config.ipc),
                    config.pixel_momentum)
    streams = {c: substream(config.seed, f"batch:{c}") for c in range(syn.num_classes)}
    enc_rng = substream(config.seed, "dm-encoder")
    aug_stream = substream(config.seed, "augment")

    for i in range(1, config.iterations + 1):
        t0 = time.perf_counter()
        try:
            enc = encoder_provider(i) if encoder_provider is not None else build_convnet(spec, enc_rng)
            with ad.record():
                loss = matching_loss(
                    lambda x: encoder_forward(enc, x),
                    dataset, syn, config.real_batch, streams, aug_stream, config.augment,
                )
                ad.backward(loss)
            opt.step()
        except NumericError as err:
            raise NumericError(f"condensation aborted at iteration {i}: {err}") from err
        ms = (time.perf_counter() - t0) * 1e3
        if progress is not None:
            progress(ProgressRecord(i, loss.item(), None, None, None, ms))
        _maybe_checkpoint(config, syn, i)
    syn.canvases.requires_grad = False
    return syn


def save_synthetic(path, syn: SyntheticSet) -> None:
    """Container layout plus a footer: factor u8 | ipc u32 | mean/std f64[C]."""
    with open(path, "wb") as f:
        f.write(SYNSET_MAGIC)
        bio.write_u16(f, SYNSET_VERSION)
        bio.write_u8(f, bio.DTYPE_F32)
        bio.write_u8(f, 4)
        for e in syn.canvases.shape:
            bio.write_u32(f, e)
        bio.write_u32(f, syn.num_classes)
        f.write(syn.labels.astype("<u4").tobytes())
        f.write(syn.canvases.data.astype("<f4").tobytes())
        bio.write_u8(f, syn.factor)
        bio.write_u32(f, syn.ipc)
        for v in syn.mean:
            bio.write_f64(f, float(v))
        for v in syn.std:
            bio.write_f64(f, float(v))


def load_synthetic(path) -> SyntheticSet:
    with open(path, "rb") as f:
        magic = bio.read_exact(f, 4)
        if magic != SYNSET_MAGIC:
            raise FormatError(f"bad synthetic-set magic {magic!r} in {path}")
        version = bio.read_u16(f)
        if version != SYNSET_VERSION:
            raise FormatError(f"unsupported synthetic-set version {version}")
        code = bio.read_u8(f)
        rank = bio.read_u8(f)
        if code != bio.DTYPE_F32 or rank != 4:
            raise FormatError("synthetic set must be rank-4 float32")
        shape = tuple(bio.read_u32(f) for _ in range(rank))
        kcls = bio.read_u32(f)
        labels = np.frombuffer(bio.read_exact(f, 4 * shape[0]), dtype="<u4").astype(np.int64)
        data = np.frombuffer(bio.read_exact(f, 4 * int(np.prod(shape))), dtype="<f4")
        canvases = data.astype(np.float32).reshape(shape)
        factor = bio.read_u8(f)
        ipc = bio.read_u32(f)
        c = shape[1]
        mean = np.array([bio.read_f64(f) for _ in range(c)])
        std = np.array([bio.read_f64(f) for _ in range(c)])
    if shape[0] != kcls * ipc:
        raise FormatError(f"{shape[0]} canvases inconsistent with {kcls} classes x ipc {ipc}")
    return SyntheticSet(
        canvases=Tensor(canvases),
        labels=labels,
        num_classes=kcls,
        ipc=ipc,
        factor=factor,
        mean=mean,
        std=std,
    )


def write_ppm_grid(path, syn: SyntheticSet) -> None:
    """Viewable preview: one row per class, de-normalized, clamped u8 RGB."""
    canv = syn.canvases.data
    n, c, h, w = canv.shape
    c_std = syn.std.reshape(1, c, 1, 1)
    c_mean = syn.mean.reshape(1, c, 1, 1)
    img01 = np.clip(canv * c_std + c_mean, 0.0, 1.0)
    u8 = (img01 * 255.0).round().astype(np.uint8)
    if c == 1:
        u8 = np.repeat(u8, 3, axis=1)
    elif c != 3:
        u8 = np.repeat(u8[:, :1], 3, axis=1)
    grid = u8.reshape(syn.num_classes, syn.ipc, 3, h, w)
    grid = grid.transpose(0, 3, 1, 4, 2).reshape(syn.num_classes * h, syn.ipc * w, 3)
    with open(path, "wb") as f:
        f.write(f"P6\n{grid.shape[1]} {grid.shape[0]}\n255\n".encode())
        f.write(grid.tobytes())


def write_progress_csv(path, records: List[ProgressRecord]) -> None:
    """One row per iteration: iter, loss_pltda, loss_calib, lambda,
    expert_n, ms_per_iter. Optional fields are empty when not triggered."""

    def fmt(v) -> str:
        return "" if v is None else f"{v:.6g}"

    with open(path, "w") as f:
        f.write("iter,loss_pltda,loss_calib,lambda,expert_n,ms_per_iter\n")
        for r in records:
            n = "" if r.expert_n is None else str(r.expert_n)
            f.write(
                f"{r.iteration},{fmt(r.loss_match)},{fmt(r.loss_calib)},"
                f"{fmt(r.lam)},{n},{fmt(r.ms)}\n"
            )
