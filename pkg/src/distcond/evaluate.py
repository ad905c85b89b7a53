"""Evaluation of condensed sets: from-scratch retraining, coreset
baselines, and the diagnostics (feature-discrepancy curve, interpolation
sweep, expert accuracy on synthetic data)."""

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .condense import AugmentSwitches, SyntheticSet, apply_augment, draw_augment, unfactor
from .data import RealDataset
from .errors import NumericError, ShapeError
from .experts import ExpertBank, ExpertEntry
from .networks import (
    ConvNetSpec,
    ParamSet,
    SGDMomentum,
    build_convnet,
    classification_accuracy,
    classifier_forward,
    encoder_forward,
    interpolate_params,
)
from .rng import substream


@dataclass
class EvalAugment:
    """Training-time pipeline: color jitter -> shift-crop -> CutMix."""

    color: bool = True
    crop: bool = True
    cutmix: bool = True
    crop_pad: int = 4

    def switches(self) -> AugmentSwitches:
        return AugmentSwitches(color=self.color, crop=self.crop, crop_pad=self.crop_pad)


@dataclass
class EvalReport:
    accuracies: List[float]
    seeds: List[int]
    mean: float
    std: float
    degenerate_std: bool  # True when only one run was requested
    config: Dict[str, object] = field(default_factory=dict)


def cutmix(
    x: np.ndarray,
    labels: np.ndarray,
    rng: np.random.Generator,
    coef: Optional[float] = None,
) -> Tuple[np.ndarray, np.ndarray, float]:
    """Paste a random box from a shuffled partner batch; returns the mixed
    batch, the partner labels, and the label weight of the original batch
    (adjusted to the realized box area)."""
    n, _, h, w = x.shape
    perm = rng.permutation(n)
    if coef is None:
        coef = float(rng.beta(1.0, 1.0))
    cut = math.sqrt(max(0.0, 1.0 - coef))
    rh, rw = int(round(h * cut)), int(round(w * cut))
    cy, cx = int(rng.integers(0, h)), int(rng.integers(0, w))
    if rh >= h and rw >= w:
        y0, y1, x0, x1 = 0, h, 0, w
    else:
        y0, y1 = max(0, cy - rh // 2), min(h, cy - rh // 2 + rh)
        x0, x1 = max(0, cx - rw // 2), min(w, cx - rw // 2 + rw)
    area = max(0, y1 - y0) * max(0, x1 - x0)
    if area == 0:
        return x, labels[perm], 1.0
    mixed = x.copy()
    mixed[:, :, y0:y1, x0:x1] = x[perm][:, :, y0:y1, x0:x1]
    return mixed, labels[perm], 1.0 - area / (h * w)


def train_eval_model(
    syn: SyntheticSet,
    spec: ConvNetSpec,
    epochs: int,
    lr: float,
    seed: int,
    augment: Optional[EvalAugment] = None,
    momentum: float = 0.9,
    weight_decay: float = 5e-4,
    batch_size: int = 64,
) -> ParamSet:
    """Train a fresh network on the unfactored synthetic set."""
    if syn.total_examples == 0:
        raise ShapeError("synthetic set is empty")
    augment = augment if augment is not None else EvalAugment()
    with ad.pause_recording():
        imgs_t, labels = unfactor(syn)
    images = imgs_t.data.astype(np.float32, copy=False)
    params = build_convnet(spec, seed).set_requires_grad(True)
    opt = SGDMomentum(params, lr=lr, momentum=momentum, weight_decay=weight_decay)
    order = substream(seed, "eval-order")
    aug_rng = substream(seed, "eval-aug")
    switches = augment.switches()
    m = images.shape[0]
    for epoch in range(epochs):
        perm = order.permutation(m)
        for s in range(0, m, batch_size):
            idx = perm[s : s + batch_size]
            xb, yb = images[idx], labels[idx]
            if switches.any:
                with ad.pause_recording():
                    xb = apply_augment(Tensor(xb), draw_augment(aug_rng, switches), switches).data
            y2, lam_adj = None, 1.0
            if augment.cutmix:
                xb, y2, lam_adj = cutmix(xb, yb, aug_rng)
            try:
                with ad.record():
                    logits = classifier_forward(params, Tensor(xb))
                    loss = ad.softmax_cross_entropy(logits, yb)
                    if y2 is not None and lam_adj < 1.0:
                        loss = ad.add(
                            ad.mul(loss, lam_adj),
                            ad.mul(ad.softmax_cross_entropy(logits, y2), 1.0 - lam_adj),
                        )
                    ad.backward(loss)
            except NumericError as err:
                raise NumericError(f"evaluation training diverged at epoch {epoch}: {err}") from err
            opt.step()
            opt.zero_grad()
    return params.set_requires_grad(False)


def test_accuracy(params: ParamSet, dataset: RealDataset) -> float:
    if len(dataset) == 0:
        raise ShapeError("test set is empty")
    return classification_accuracy(params, dataset.images, dataset.labels)


def evaluate_repeats(
    syn: SyntheticSet,
    spec: ConvNetSpec,
    test_dataset: RealDataset,
    repeats: int,
    base_seed: int,
    epochs: int = 300,
    lr: float = 0.01,
    augment: Optional[EvalAugment] = None,
    momentum: float = 0.9,
    weight_decay: float = 5e-4,
    batch_size: int = 64,
) -> EvalReport:
    """Train/test `repeats` independent models with seeds base..base+R-1."""
    if repeats < 1:
        raise ShapeError("repeats must be >= 1")
    seeds = [base_seed + r for r in range(repeats)]
    accs = []
    for s in seeds:
        model = train_eval_model(
            syn, spec, epochs, lr, s, augment,
            momentum=momentum, weight_decay=weight_decay, batch_size=batch_size,
        )
        accs.append(test_accuracy(model, test_dataset))
    mean = float(np.mean(accs))
    std = float(np.std(accs, ddof=1)) if repeats > 1 else 0.0
    return EvalReport(
        accuracies=accs,
        seeds=seeds,
        mean=mean,
        std=std,
        degenerate_std=repeats == 1,
        config={
            "epochs": epochs, "lr": lr, "momentum": momentum,
            "weight_decay": weight_decay, "batch_size": batch_size,
            "repeats": repeats, "base_seed": base_seed,
            "augment": augment if augment is not None else EvalAugment(),
        },
    )


# ---------------------------------------------------------------------------
# coreset baselines


def _selection_to_synset(dataset: RealDataset, per_class: List[np.ndarray], ipc: int) -> SyntheticSet:
    canvases = np.concatenate([dataset.images[idx] for idx in per_class])
    labels = np.repeat(np.arange(dataset.num_classes), ipc).astype(np.int64)
    return SyntheticSet(
        canvases=Tensor(canvases.copy()),
        labels=labels,
        num_classes=dataset.num_classes,
        ipc=ipc,
        factor=1,
        mean=dataset.mean.copy(),
        std=dataset.std.copy(),
    )


def _check_ipc(dataset: RealDataset, ipc: int) -> None:
    smallest = min(len(idx) for idx in dataset.class_index)
    if ipc > smallest:
        raise ShapeError(f"ipc {ipc} exceeds smallest class size {smallest}")


def random_select(dataset: RealDataset, ipc: int, seed: int) -> SyntheticSet:
    """Uniform per-class subset without replacement."""
    _check_ipc(dataset, ipc)
    rng = substream(seed, "coreset-random")
    chosen = [rng.choice(idx, size=ipc, replace=False) for idx in dataset.class_index]
    return _selection_to_synset(dataset, chosen, ipc)


def _flatten_features(images: np.ndarray) -> np.ndarray:
    return images.reshape(images.shape[0], -1).astype(np.float64)


def _canonical_order(x: np.ndarray) -> np.ndarray:
    """Stable total order on feature vectors (ties keyed to content, so the
    selection is invariant to example permutation)."""
    return np.lexsort(x.T[::-1])


def _pick_extreme(values: np.ndarray, available: np.ndarray, rank: np.ndarray, largest: bool) -> int:
    vals = values.copy()
    vals[~available] = -np.inf if largest else np.inf
    best = vals.max() if largest else vals.min()
    ties = np.flatnonzero((vals == best) & available)
    return int(ties[np.argmin(rank[ties])])


def herding_select(
    dataset: RealDataset,
    ipc: int,
    features: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> SyntheticSet:
    """Greedy herding per class: each step adds the example bringing the
    running selection mean closest to the class mean."""
    _check_ipc(dataset, ipc)
    feat_fn = features if features is not None else _flatten_features
    chosen: List[np.ndarray] = []
    for idx in dataset.class_index:
        x = np.asarray(feat_fn(dataset.images[idx]), dtype=np.float64)
        mu = x.mean(axis=0)
        order = _canonical_order(x)
        rank = np.empty(len(order), dtype=np.int64)
        rank[order] = np.arange(len(order))
        available = np.ones(x.shape[0], dtype=bool)
        running = np.zeros_like(mu)
        picks = []
        for t in range(1, ipc + 1):
            cand = (running + x) / t
            obj = ((mu - cand) ** 2).sum(axis=1)
            best = _pick_extreme(obj, available, rank, largest=False)
            picks.append(best)
            available[best] = False
            running += x[best]
        chosen.append(idx[np.asarray(picks)])
    return _selection_to_synset(dataset, chosen, ipc)


def kcenter_select(
    dataset: RealDataset,
    ipc: int,
    features: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> SyntheticSet:
    """Greedy 2-approximation k-center per class, seeded at the example
    nearest the class mean."""
    _check_ipc(dataset, ipc)
    feat_fn = features if features is not None else _flatten_features
    chosen: List[np.ndarray] = []
    for idx in dataset.class_index:
        x = np.asarray(feat_fn(dataset.images[idx]), dtype=np.float64)
        mu = x.mean(axis=0)
        order = _canonical_order(x)
        rank = np.empty(len(order), dtype=np.int64)
        rank[order] = np.arange(len(order))
        available = np.ones(x.shape[0], dtype=bool)
        first_obj = ((mu - x) ** 2).sum(axis=1)
        best = _pick_extreme(first_obj, available, rank, largest=False)
        picks = [best]
        available[best] = False
        mind = ((x - x[best]) ** 2).sum(axis=1)
        for _ in range(1, ipc):
            best = _pick_extreme(mind, available, rank, largest=True)
            picks.append(best)
            available[best] = False
            mind = np.minimum(mind, ((x - x[best]) ** 2).sum(axis=1))
        chosen.append(idx[np.asarray(picks)])
    return _selection_to_synset(dataset, chosen, ipc)


# ---------------------------------------------------------------------------
# diagnostics


def encode_in_batches(params: ParamSet, images: np.ndarray, batch: int = 512) -> np.ndarray:
    outs = []
    with ad.pause_recording():
        for s in range(0, images.shape[0], batch):
            x = Tensor(images[s : s + batch].astype(params.dtype, copy=False))
            outs.append(encoder_forward(params, x).data)
    if not outs:
        return np.zeros((0, params.spec.feature_dim), dtype=params.dtype)
    return np.concatenate(outs)


def _feature_discrepancy(params: ParamSet, dataset: RealDataset, syn_images: np.ndarray,
                         syn_labels: np.ndarray) -> float:
    """Sum over classes of squared mean-feature distance, per feature dim."""
    total = 0.0
    for c in range(dataset.num_classes):
        rf = encode_in_batches(params, dataset.images[dataset.class_index[c]])
        sf = encode_in_batches(params, syn_images[syn_labels == c])
        d = rf.mean(axis=0) - sf.mean(axis=0)
        total += float((d.astype(np.float64) ** 2).sum())
    return total / params.spec.feature_dim


def discrepancy_curve(
    syn: SyntheticSet,
    dataset: RealDataset,
    spec: ConvNetSpec,
    checkpoints: int,
    seed: int,
    epochs: int = 20,
    lr: float = 0.01,
    momentum: float = 0.9,
    weight_decay: float = 5e-4,
    batch_size: int = 64,
) -> List[Tuple[int, float]]:
    """Train a fresh network on the real data and report the real/synthetic
    feature discrepancy at evenly spaced snapshots (step counts)."""
    if checkpoints < 1:
        raise ShapeError("need at least one checkpoint")
    with ad.pause_recording():
        imgs_t, syn_labels = unfactor(syn)
    syn_images = imgs_t.data
    params = build_convnet(spec, seed).set_requires_grad(True)
    opt = SGDMomentum(params, lr=lr, momentum=momentum, weight_decay=weight_decay)
    order = substream(seed, "curve-order")
    m = len(dataset)
    steps_per_epoch = math.ceil(m / batch_size)
    total = epochs * steps_per_epoch
    stages = np.round(np.linspace(0, total, checkpoints)).astype(int) if checkpoints > 1 else np.array([total])
    curve: List[Tuple[int, float]] = []
    pending = list(stages)
    step = 0

    def flush():
        while pending and pending[0] == step:
            pending.pop(0)
            curve.append((step, _feature_discrepancy(params, dataset, syn_images, syn_labels)))

    flush()
    for epoch in range(epochs):
        perm = order.permutation(m)
        for s in range(0, m, batch_size):
            idx = perm[s : s + batch_size]
            with ad.record():
                logits = classifier_forward(params, Tensor(dataset.images[idx]))
                loss = ad.softmax_cross_entropy(logits, dataset.labels[idx])
                ad.backward(loss)
            opt.step()
            opt.zero_grad()
            step += 1
            flush()
    return curve


def lambda_sweep(
    entry: ExpertEntry, test_dataset: RealDataset, grid: Sequence[float]
) -> List[Tuple[float, float]]:
    """Test accuracy of the init/expert blend at each grid coefficient."""
    rows = []
    for lam in grid:
        if not 0.0 <= lam <= 1.0:
            raise ShapeError(f"grid value {lam} outside [0, 1]")
        blended = interpolate_params(entry.init, entry.expert, float(lam))
        rows.append((float(lam), test_accuracy(blended, test_dataset)))
    return rows


def expert_acc_on_syn(bank: ExpertBank, syn: SyntheticSet) -> float:
    """Mean expert accuracy on the unfactored synthetic examples."""
    if len(bank) == 0:
        raise ShapeError("expert bank is empty")
    with ad.pause_recording():
        imgs_t, labels = unfactor(syn)
    images = imgs_t.data
    accs = [
        classification_accuracy(e.expert, images, labels) for e in bank.entries
    ]
    return float(np.mean(accs))


# ---------------------------------------------------------------------------
# CSV emission (6 significant digits)


def _g(v: float) -> str:
    return f"{v:.6g}"


def write_eval_report_csv(path, report: EvalReport) -> None:
    with open(path, "w") as f:
        f.write("run,seed,accuracy\n")
        for i, (s, a) in enumerate(zip(report.seeds, report.accuracies)):
            f.write(f"{i},{s},{_g(a)}\n")


def write_discrepancy_csv(path, curve: List[Tuple[int, float]]) -> None:
    with open(path, "w") as f:
        f.write("stage,value\n")
        for stage, value in curve:
            f.write(f"{stage},{_g(value)}\n")


def write_lambda_csv(path, rows: List[Tuple[float, float]]) -> None:
    with open(path, "w") as f:
        f.write("lambda,accuracy\n")
        for lam, acc in rows:
            f.write(f"{_g(lam)},{_g(acc)}\n")
