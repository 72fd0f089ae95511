"""Loss, Adam, layer freezing and the two-phase cross-validated training loop."""

from __future__ import annotations

import contextlib
import json
import logging
import queue
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from .errors import BadSelector, EmptyFold, LabelOutOfRange, LeakageError, ShapeMismatch
from .metrics import EvalReport, confusion, report
from .nn.model import Sequential, count_params, save_checkpoint
from .spectro import resize_array

__all__ = [
    "AdamHyper",
    "AdamState",
    "Adam",
    "adam_step",
    "sparse_ce_loss",
    "parse_selector",
    "set_trainable",
    "TrainConfig",
    "TrainHistory",
    "ArraySource",
    "CacheSource",
    "fit",
    "evaluate",
    "FoldResult",
    "CVResult",
    "run_cv",
]

log = logging.getLogger(__name__)

N_CLASSES = 5


# -- loss -----------------------------------------------------------------------


def sparse_ce_loss(probs, labels, eps: float = 1e-12):
    """Mean negative log-likelihood of integer labels under softmax rows.

    Returns ``(loss, grad)`` where ``grad`` is the gradient with respect to
    the logits that produced `probs`: ``(probs - onehot) / batch``.
    """
    probs = np.asarray(probs)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, k = probs.shape
    if labels.shape != (n,):
        raise ShapeMismatch(f"{labels.size} labels for {n} rows")
    if n and (labels.min() < 0 or labels.max() >= k):
        raise LabelOutOfRange(f"labels must lie in [0, {k})")
    picked = probs[np.arange(n), labels]
    loss = float(-np.mean(np.log(np.maximum(picked, eps))))
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1
    grad /= n
    return loss, grad


# -- optimizer ------------------------------------------------------------------


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, hyper: AdamHyper = AdamHyper()):
    """One bias-corrected Adam update of ``params`` (in place).

    Only names present in `grads` are updated; moments for a name are
    created lazily on its first update. The timestep is global.
    """
    state.t += 1
    t = state.t
    b1, b2 = hyper.beta1, hyper.beta2
    c1 = 1 - b1**t
    c2 = 1 - b2**t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ShapeMismatch(f"{name}: grad {g.shape} vs param {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * np.square(g)
        m_hat = m / c1
        v_hat = v / c2
        p -= (hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.eps)).astype(p.dtype, copy=False)
    return params, state


class Adam:
    """Adam over the trainable layers of a :class:`Sequential`."""

    def __init__(self, hyper: AdamHyper = AdamHyper()):
        self.hyper = hyper
        self.state = AdamState()

    def step(self, model: Sequential) -> None:
        params, grads = {}, {}
        for name, owner, key in model.named_params(trainable_only=True):
            if key in owner.grads:
                params[name] = owner.params[key]
                grads[name] = owner.grads[key]
        adam_step(params, grads, self.state, self.hyper)


# -- freezing -------------------------------------------------------------------


def parse_selector(selector: Union[str, Iterable[int], None], n_layers: int, head_start: Optional[int] = None) -> set:
    """Resolve a layer selector to a set of indices.

    Accepts ``"all"``, ``"none"``, ``"head"`` (needs `head_start`),
    comma-separated indices and Python-style slices (``"5:"``, ``"2:4"``,
    ``"-3:"``), or an iterable of ints.
    """
    if selector is None or (isinstance(selector, str) and selector.strip() == "all"):
        return set(range(n_layers))
    if not isinstance(selector, str):
        idx = set()
        for i in selector:
            if not isinstance(i, (int, np.integer)) or not -n_layers <= i < n_layers:
                raise BadSelector(f"layer index {i!r} out of range for {n_layers} layers")
            idx.add(int(i) % n_layers)
        return idx
    text = selector.strip()
    if text in ("none", ""):
        return set()
    if text == "head":
        if head_start is None:
            raise BadSelector("'head' selector needs a model with a known head")
        return set(range(head_start, n_layers))
    out = set()
    for part in text.split(","):
        part = part.strip()
        try:
            if ":" in part:
                lo, hi = (int(s) if s.strip() else None for s in part.split(":", 1))
                for bound in (lo, hi):
                    if bound is not None and not -n_layers <= bound <= n_layers:
                        raise BadSelector(f"slice bound {bound} out of range in {selector!r}")
                out.update(range(n_layers)[slice(lo, hi)])
            else:
                i = int(part)
                if not -n_layers <= i < n_layers:
                    raise BadSelector(f"layer index {i} out of range for {n_layers} layers")
                out.add(i % n_layers)
        except ValueError as exc:
            if isinstance(exc, BadSelector):
                raise
            raise BadSelector(f"cannot parse selector {selector!r}") from None
    return out


def set_trainable(model: Sequential, selector) -> Sequential:
    """Flag layers in `selector` trainable and all others frozen."""
    head = getattr(model.config, "head_start", None)
    return model.set_trainable(parse_selector(selector, len(model), head))


# -- data sources ---------------------------------------------------------------


class ArraySource:
    """In-memory uint8 or float images with integer labels."""

    def __init__(self, images, labels, subjects: Optional[Sequence[str]] = None):
        self.images = np.asarray(images)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.subjects = list(subjects) if subjects is not None else None

    def __len__(self):
        return len(self.labels)

    def batch(self, idx):
        x = self.images[idx]
        if x.dtype == np.uint8:
            x = x.astype(np.float32) / 255.0
        return x, self.labels[idx]


class CacheSource:
    """Batches read from an image cache, resized to the model input."""

    def __init__(self, cache, keys: Sequence, input_shape: tuple):
        self.cache = cache
        self.keys = list(keys)
        self.input_shape = tuple(input_shape)
        self.labels = np.array([int(cache.label(k)) for k in self.keys], dtype=np.int64)

    def __len__(self):
        return len(self.keys)

    @property
    def subjects(self):
        return [k[0] for k in self.keys]

    def batch(self, idx):
        h, w, _ = self.input_shape
        xs = np.empty((len(idx), h, w, 3), dtype=np.float32)
        for j, i in enumerate(idx):
            img, _ = self.cache.get(self.keys[i])
            px = img.pixels
            if px.shape[:2] != (h, w):
                px = np.clip(np.rint(resize_array(px, w, h)), 0, 255)
            xs[j] = px / np.float32(255.0)
        return xs, self.labels[idx]


def _batches(source, order, batch_size: int, prefetch: int):
    chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    if prefetch <= 0:
        for c in chunks:
            yield source.batch(c)
        return
    q: queue.Queue = queue.Queue(maxsize=prefetch)
    stop = threading.Event()
    done = object()

    def produce():
        try:
            for c in chunks:
                if stop.is_set():
                    return
                q.put(source.batch(c))
            q.put(done)
        except BaseException as exc:  # surfaced in the consumer
            q.put(exc)

    th = threading.Thread(target=produce, daemon=True)
    th.start()
    try:
        while True:
            item = q.get()
            if item is done:
                break
            if isinstance(item, BaseException):
                raise item
            yield item
    finally:
        stop.set()
        while th.is_alive():
            try:
                q.get_nowait()
            except queue.Empty:
                pass
            th.join(timeout=0.01)


# -- training loop --------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    epochs: int = 20
    phase1_epochs: int = 5
    trainable_layers: str = "5:"  # phase-2 selector
    adam: AdamHyper = AdamHyper()
    seed: int = 0
    prefetch: int = 2
    strict: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 <= self.phase1_epochs <= self.epochs:
            raise ValueError("need 0 <= phase1_epochs <= epochs")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainHistory:
    train_accuracy: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    frozen_digest_phase1: Optional[str] = None
    frozen_digest_final: Optional[str] = None

    def __len__(self):
        return len(self.loss)

    def to_lines(self) -> str:
        rows = []
        for i, (a, v, l) in enumerate(zip(self.train_accuracy, self.val_accuracy, self.loss)):
            rows.append(json.dumps({"epoch": i + 1, "loss": l, "train_accuracy": a,
                                    "val_accuracy": None if np.isnan(v) else v}, sort_keys=True))
        return "".join(r + "\n" for r in rows)


def _strict_ctx(strict: bool):
    if not strict:
        return contextlib.nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return contextlib.nullcontext()
    return threadpool_limits(limits=1)


def predict_labels(model: Sequential, source, batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    order = np.arange(len(source))
    preds, trues = [], []
    for x, y in _batches(source, order, batch_size, prefetch=0):
        preds.append(np.argmax(model.forward(x, training=False, logits=True), axis=1))
        trues.append(y)
    if not preds:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(trues), np.concatenate(preds)


def evaluate(model: Sequential, source, batch_size: int = 64) -> EvalReport:
    y_true, y_pred = predict_labels(model, source, batch_size)
    k = model.output_shape[-1]
    return report(confusion(y_true, y_pred, k))


def fit(model: Sequential, train, cfg: TrainConfig = TrainConfig(), val=None,
        on_epoch: Optional[Callable] = None) -> TrainHistory:
    """Two-phase training: all layers for ``phase1_epochs``, then only
    ``trainable_layers`` for the remaining epochs.

    Each epoch visits `train` in an order drawn from
    ``default_rng([seed, epoch])``; the last partial batch is kept. Train
    accuracy is the running accuracy of the epoch's training-mode forward
    passes. Digests of the phase-2 frozen layers are taken at the phase
    boundary and after the final epoch.
    """
    if len(train) == 0:
        raise EmptyFold("no training samples")
    hist = TrainHistory()
    opt = Adam(cfg.adam)
    set_trainable(model, "all")
    frozen: Optional[list] = None
    with _strict_ctx(cfg.strict):
        for epoch in range(cfg.epochs):
            if epoch == cfg.phase1_epochs and cfg.phase1_epochs < cfg.epochs:
                set_trainable(model, cfg.trainable_layers)
                frozen = [i for i, l in enumerate(model.layers) if not l.trainable]
                hist.frozen_digest_phase1 = model.layer_digest(frozen)
            order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train))
            correct = 0
            loss_sum = 0.0
            for x, y in _batches(train, order, cfg.batch_size, 0 if cfg.strict else cfg.prefetch):
                probs = model.forward(x, training=True)
                loss, dlogits = sparse_ce_loss(probs, y)
                model.backward(dlogits.astype(model.dtype, copy=False))
                opt.step(model)
                correct += int(np.sum(np.argmax(probs, axis=1) == y))
                loss_sum += loss * len(y)
            hist.train_accuracy.append(correct / len(train))
            hist.loss.append(loss_sum / len(train))
            if val is not None and len(val):
                y_true, y_pred = predict_labels(model, val)
                hist.val_accuracy.append(float(np.mean(y_true == y_pred)))
            else:
                hist.val_accuracy.append(float("nan"))
            log.info("epoch %d loss %.4f acc %.4f val %.4f", epoch + 1, hist.loss[-1],
                     hist.train_accuracy[-1], hist.val_accuracy[-1])
            if on_epoch is not None:
                on_epoch(epoch, model, hist)
    if frozen is not None:
        hist.frozen_digest_final = model.layer_digest(frozen)
    return hist


# -- cross-validation -----------------------------------------------------------


@dataclass
class FoldResult:
    fold: int
    validation_subjects: list
    report: EvalReport
    history: TrainHistory
    n_train: int
    n_val: int


@dataclass
class CVResult:
    folds: list
    aggregate: dict

    @property
    def accuracy(self) -> float:
        return self.aggregate["accuracy"]


def aggregate_reports(reports: Sequence[EvalReport]) -> dict:
    """Arithmetic mean of per-fold metrics."""
    if not reports:
        raise EmptyFold("no folds to aggregate")
    return {
        "accuracy": float(np.mean([r.accuracy for r in reports])),
        "macro_f1": float(np.mean([r.macro_f1 for r in reports])),
        "kappa": float(np.mean([r.kappa for r in reports])),
        "per_class_f1": [float(v) for v in np.mean([r.per_class_f1 for r in reports], axis=0)],
        "n_folds": len(reports),
    }


def run_cv(model_factory: Callable[[int], Sequential], plan, cache, cfg: TrainConfig = TrainConfig(),
           out_dir=None) -> CVResult:
    """Train and evaluate one fresh model per fold of `plan`.

    ``model_factory(fold_index)`` must return a newly initialized model.
    Training and validation keys are split by subject; any overlap raises
    :class:`LeakageError`. With `out_dir`, per-fold reports, histories and
    checkpoints plus ``aggregate.json`` are written there.
    """
    keys = sorted(cache.keys())
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    results = []
    for f, (val_subjects, train_subjects) in enumerate(plan.folds):
        train_keys = [k for k in keys if k[0] in train_subjects]
        val_keys = [k for k in keys if k[0] in val_subjects]
        seen = {k[0] for k in train_keys}
        if seen & set(val_subjects) or {k[0] for k in val_keys} & seen:
            raise LeakageError(f"fold {f}: subjects {sorted(seen & set(val_subjects))} in both splits")
        if not train_keys or not val_keys:
            raise EmptyFold(f"fold {f}: {len(train_keys)} training / {len(val_keys)} validation epochs")
        model = model_factory(f)
        train = CacheSource(cache, train_keys, model.input_shape)
        val = CacheSource(cache, val_keys, model.input_shape)
        hist = fit(model, train, cfg, val=val)
        rep = evaluate(model, val)
        results.append(FoldResult(f, sorted(val_subjects), rep, hist, len(train_keys), len(val_keys)))
        log.info("fold %d: acc %.4f mf1 %.4f kappa %.4f", f, rep.accuracy, rep.macro_f1, rep.kappa)
        if out is not None:
            line = rep.to_dict()
            line.update(fold=f, validation_subjects=sorted(val_subjects), n_train=len(train_keys),
                        n_val=len(val_keys), trainable_params=count_params(model, True),
                        total_params=count_params(model))
            (out / f"fold_{f:02d}.json").write_text(json.dumps(line, sort_keys=True) + "\n")
            (out / f"history_{f:02d}.jsonl").write_text(hist.to_lines())
            save_checkpoint(model, out / f"fold_{f:02d}.egmw")
    agg = aggregate_reports([r.report for r in results])
    if out is not None:
        (out / "aggregate.json").write_text(json.dumps(agg, sort_keys=True) + "\n")
    return CVResult(results, agg)
