"""Expert pre-training and the paired-checkpoint bank.

Each bank entry keeps the untouched initialization alongside the fully
trained network from the same seed; middle encoders are convex
combinations of the two, sampled with a fresh coefficient per draw.
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from . import _binio as bio
from . import autodiff as ad
from .autodiff import Tensor
from .data import RealDataset
from .errors import FormatError, NumericError, ShapeError
from .networks import (
    ConvNetSpec,
    ParamSet,
    SGDMomentum,
    build_convnet,
    classification_accuracy,
    classifier_forward,
    interpolate_params,
)
from .rng import substream

BANK_MAGIC = b"DCXB"
BANK_VERSION = 1


@dataclass
class ExpertMeta:
    seed: int
    epochs: int
    lr: float
    momentum: float
    weight_decay: float
    batch_size: int
    train_acc: float
    test_acc: float  # NaN when no test split was given


@dataclass
class ExpertEntry:
    init: ParamSet
    expert: ParamSet
    meta: ExpertMeta


@dataclass
class ExpertBank:
    spec: ConvNetSpec
    entries: List[ExpertEntry]

    def __len__(self) -> int:
        return len(self.entries)


def pretrain_expert(
    dataset: RealDataset,
    spec: ConvNetSpec,
    seed: int,
    epochs: int = 60,
    lr: float = 0.01,
    momentum: float = 0.9,
    weight_decay: float = 5e-4,
    batch_size: int = 64,
    test_dataset: Optional[RealDataset] = None,
) -> ExpertEntry:
    """Train one classifier with SGD over shuffled epochs; keep its init."""
    if len(dataset) == 0:
        raise ShapeError("cannot pre-train on an empty dataset")
    init = build_convnet(spec, seed)
    params = init.copy().set_requires_grad(True)
    opt = SGDMomentum(params, lr=lr, momentum=momentum, weight_decay=weight_decay)
    order = substream(seed, "epoch-order")
    m = len(dataset)
    for epoch in range(epochs):
        perm = order.permutation(m)
        for s in range(0, m, batch_size):
            idx = perm[s : s + batch_size]
            x = Tensor(dataset.images[idx])
            try:
                with ad.record():
                    logits = classifier_forward(params, x)
                    loss = ad.softmax_cross_entropy(logits, dataset.labels[idx])
                    ad.backward(loss)
            except NumericError as err:
                raise NumericError(f"expert training diverged at epoch {epoch}: {err}") from err
            opt.step()
            opt.zero_grad()
    params.set_requires_grad(False)
    train_acc = classification_accuracy(params, dataset.images, dataset.labels)
    test_acc = (
        classification_accuracy(params, test_dataset.images, test_dataset.labels)
        if test_dataset is not None
        else math.nan
    )
    meta = ExpertMeta(seed, epochs, lr, momentum, weight_decay, batch_size, train_acc, test_acc)
    return ExpertEntry(init=init, expert=params, meta=meta)


def sample_middle_encoder(
    bank: ExpertBank, rng: np.random.Generator
) -> Tuple[ParamSet, int, float]:
    """Pick expert n uniformly (1-based) and blend: lam*init + (1-lam)*expert,
    lam ~ U[0, 1)."""
    if len(bank) == 0:
        raise ShapeError("expert bank is empty")
    n = int(rng.integers(0, len(bank))) + 1
    lam = float(rng.random())
    entry = bank.entries[n - 1]
    return interpolate_params(entry.init, entry.expert, lam), n, lam


def _write_paramset(f, params: ParamSet) -> None:
    bio.write_u32(f, len(params.tensors))
    for name, t in params.items():
        raw = name.encode("utf-8")
        bio.write_u16(f, len(raw))
        f.write(raw)
        bio.write_array(f, t.data.astype(np.float32, copy=False))


def _read_paramset(f, spec: ConvNetSpec) -> ParamSet:
    count = bio.read_u32(f)
    tensors = {}
    for _ in range(count):
        nlen = bio.read_u16(f)
        name = bio.read_exact(f, nlen).decode("utf-8")
        tensors[name] = Tensor(bio.read_array(f))
    return ParamSet(spec, tensors)


def save_bank(path, bank: ExpertBank) -> None:
    spec = bank.spec
    with open(path, "wb") as f:
        f.write(BANK_MAGIC)
        bio.write_u16(f, BANK_VERSION)
        for v in (spec.depth, spec.width, spec.in_channels, spec.height, spec.width_px):
            bio.write_u16(f, v)
        bio.write_u32(f, spec.num_classes)
        bio.write_u32(f, len(bank.entries))
        for e in bank.entries:
            bio.write_u64(f, e.meta.seed)
            bio.write_u32(f, e.meta.epochs)
            for v in (e.meta.lr, e.meta.momentum, e.meta.weight_decay):
                bio.write_f64(f, v)
            bio.write_u32(f, e.meta.batch_size)
            bio.write_f64(f, e.meta.train_acc)
            bio.write_f64(f, e.meta.test_acc)
            _write_paramset(f, e.init)
            _write_paramset(f, e.expert)


def load_bank(path) -> ExpertBank:
    with open(path, "rb") as f:
        magic = bio.read_exact(f, 4)
        if magic != BANK_MAGIC:
            raise FormatError(f"bad bank magic {magic!r} in {path}")
        version = bio.read_u16(f)
        if version != BANK_VERSION:
            raise FormatError(f"unsupported bank version {version}")
        depth, width, in_ch, h, w = (bio.read_u16(f) for _ in range(5))
        k = bio.read_u32(f)
        spec = ConvNetSpec(depth, width, in_ch, h, w, k)
        n = bio.read_u32(f)
        entries = []
        for _ in range(n):
            meta = ExpertMeta(
                seed=bio.read_u64(f),
                epochs=bio.read_u32(f),
                lr=bio.read_f64(f),
                momentum=bio.read_f64(f),
                weight_decay=bio.read_f64(f),
                batch_size=bio.read_u32(f),
                train_acc=bio.read_f64(f),
                test_acc=bio.read_f64(f),
            )
            init = _read_paramset(f, spec)
            expert = _read_paramset(f, spec)
            if init.names() != expert.names():
                raise FormatError("bank entry has mismatched init/expert tensors")
            entries.append(ExpertEntry(init, expert, meta))
        if f.read(1):
            raise FormatError("trailing bytes after bank payload")
    return ExpertBank(spec=spec, entries=entries)
