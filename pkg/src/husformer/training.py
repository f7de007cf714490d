"""Loss, optimizer, training loop and k-fold cross-validation."""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import batch_iter
from .errors import ConfigurationError, DataError, EvaluationError
from .metrics import (
    confusion_matrix,
    hard_label_mae,
    multiclass_avg_accuracy,
    multiclass_avg_f1,
    welch_t_test,
)
from .tensor import Tape, Tensor, abs_, scale, sub, sum_

log = logging.getLogger(__name__)

SIGNIFICANCE_LEVEL = 0.01


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 1e-3
    epochs: int = 20
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    k_folds: int = 10
    seed: int = 0
    holdout_fraction: float = 0.1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be >= 0, got {self.epochs}")
        for key in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, key) < 1.0:
                raise ConfigurationError(f"{key} must lie in [0, 1), got {getattr(self, key)}")
        if not self.eps > 0:
            raise ConfigurationError(f"eps must be positive, got {self.eps}")
        if self.k_folds < 1:
            raise ConfigurationError(f"k_folds must be >= 1, got {self.k_folds}")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ConfigurationError(
                f"holdout_fraction must lie in (0, 1), got {self.holdout_fraction}"
            )

    def to_dict(self):
        return asdict(self)


def mae_loss(probs, labels):
    """Batch mean of ``sum_j |P_j - onehot(y)_j|``."""
    labels = np.asarray(labels, dtype=np.int64)
    n, c = probs.shape
    if labels.shape != (n,):
        raise DataError(f"{labels.shape} labels for {n} probability rows")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise DataError(f"label out of range [0, {c})")
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    return scale(sum_(abs_(sub(probs, Tensor(onehot)))), 1.0 / n)


class Adam:
    """Adam with bias correction. Tensors whose ``grad`` is None are skipped."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Functional form: ``state`` is ``{"t": int, "m": [...], "v": [...]}``,
    updated in place along with ``params`` (a list of arrays)."""
    if not state:
        state.update(t=0, m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])
    state["t"] += 1
    t = state["t"]
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / (1.0 - beta1 ** t)) / (np.sqrt(v / (1.0 - beta2 ** t)) + eps)
    return params, state


@dataclass
class TrainResult:
    loss_trace: list  # mean training loss per epoch
    steps: int


def train(model, dataset, cfg, on_epoch=None):
    """Mini-batch Adam on the MAE loss for ``cfg.epochs`` shuffled epochs.

    Shuffling and dropout draw from one generator seeded with ``cfg.seed``;
    the model's initial parameters are whatever it holds on entry.
    ``on_epoch(epoch, mean_loss)`` is called after every epoch.
    """
    if len(dataset) == 0:
        raise DataError("cannot train on an empty dataset")
    _check_compatible(model, dataset)
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.parameters(), cfg.learning_rate, (cfg.beta1, cfg.beta2), cfg.eps)
    trace = []
    step = 0
    for epoch in range(cfg.epochs):
        total = 0.0
        order = rng.permutation(len(dataset))
        for start in range(0, len(dataset), cfg.batch_size):
            batch = dataset.batch(order[start:start + cfg.batch_size])
            opt.zero_grad()
            with Tape() as tape:
                probs = model.forward(batch.inputs, training=True, rng=rng).probs
                loss = mae_loss(probs, batch.labels)
            value = float(loss.data)
            if not math.isfinite(value):
                raise EvaluationError(f"non-finite loss {value} at step {step} (epoch {epoch})")
            tape.backward(loss)
            opt.step()
            total += value * len(batch.labels)
            step += 1
        trace.append(total / len(dataset))
        log.debug("epoch %d: mean loss %.6f", epoch, trace[-1])
        if on_epoch is not None:
            on_epoch(epoch, trace[-1])
    return TrainResult(trace, step)


def _check_compatible(model, dataset):
    expected = [(m.name, m.channels, m.input_dim) for m in model.cfg.modalities]
    actual = [tuple(m) for m in dataset.modalities]
    if expected != actual:
        raise DataError(f"model expects modalities {expected}, dataset has {actual}")
    if model.cfg.num_classes != dataset.num_classes:
        raise DataError(
            f"model has {model.cfg.num_classes} classes, dataset has {dataset.num_classes}"
        )


def predict(model, dataset, batch_size=256):
    """Eval-mode probabilities and labels for every sample, in order."""
    _check_compatible(model, dataset)
    probs = []
    for batch in batch_iter(dataset, batch_size):
        probs.append(model.forward(batch.inputs).probs.data)
    probs = np.concatenate(probs) if probs else np.zeros((0, model.cfg.num_classes))
    return probs, np.argmax(probs, axis=-1)


def evaluate(model, dataset, batch_size=256):
    probs, preds = predict(model, dataset, batch_size)
    cm = confusion_matrix(dataset.labels, preds, dataset.num_classes)
    return {
        "acc": multiclass_avg_accuracy(cm),
        "f1": multiclass_avg_f1(cm),
        "label_mae": hard_label_mae(dataset.labels, preds),
        "confusion": cm.tolist(),
        "n": len(dataset),
    }


# -- cross-validation ---------------------------------------------------------------


def kfold_split(n, k, seed):
    """Shuffle ``range(n)`` and cut it into ``k`` folds whose sizes differ by
    at most one (the first ``n % k`` folds are the larger ones)."""
    if k < 2:
        raise ConfigurationError(f"k must be >= 2, got {k}")
    if n < k:
        raise ConfigurationError(f"cannot split {n} samples into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def holdout_split(n, fraction, seed):
    perm = np.random.default_rng(seed).permutation(n)
    n_test = max(1, int(round(n * fraction)))
    if n_test >= n:
        raise ConfigurationError(f"holdout of {n_test} leaves no training data")
    return [np.sort(perm[:n_test])]


@dataclass
class FoldResult:
    fold: int
    seed: int
    loss_trace: list
    acc: float
    f1: float
    confusion: list
    test_indices: list
    state: dict = field(default=None, repr=False)

    def to_dict(self):
        d = asdict(self)
        d.pop("state")
        return d


@dataclass
class CVReport:
    variant: str
    folds: list
    acc_mean: float
    acc_std: float
    f1_mean: float
    f1_std: float
    cross_modal_transformers: int
    parameters: int

    def to_dict(self):
        return {
            "variant": self.variant,
            "folds": [f.to_dict() for f in self.folds],
            "acc_mean": self.acc_mean,
            "acc_std": self.acc_std,
            "f1_mean": self.f1_mean,
            "f1_std": self.f1_std,
            "cross_modal_transformers": self.cross_modal_transformers,
            "parameters": self.parameters,
        }


def mean_std(values):
    """Arithmetic mean and sample standard deviation (0 for a single value)."""
    values = [float(v) for v in values]
    mu = math.fsum(values) / len(values)
    if len(values) < 2:
        return mu, 0.0
    var = math.fsum((v - mu) ** 2 for v in values) / (len(values) - 1)
    return mu, math.sqrt(var)


def run_fold(dataset, model_cfg, train_cfg, fold, test_idx):
    """Train a fresh model on everything outside ``test_idx`` and score it."""
    from .ablations import build_variant

    seed = train_cfg.seed + fold
    test_idx = np.asarray(test_idx, dtype=np.int64)
    mask = np.ones(len(dataset), dtype=bool)
    mask[test_idx] = False
    train_set = dataset.subset(np.nonzero(mask)[0])
    test_set = dataset.subset(test_idx)
    model, _ = build_variant(model_cfg, seed=seed)
    try:
        result = train(model, train_set, _with_seed(train_cfg, seed))
    except EvaluationError as exc:
        raise EvaluationError(f"fold {fold}: {exc}") from exc
    metrics = evaluate(model, test_set)
    return FoldResult(
        fold=fold, seed=seed, loss_trace=result.loss_trace, acc=metrics["acc"], f1=metrics["f1"],
        confusion=metrics["confusion"], test_indices=test_idx.tolist(),
        state={k: v.copy() for k, v in model.state().items()},
    )


def _with_seed(cfg, seed):
    d = cfg.to_dict()
    d["seed"] = seed
    return TrainConfig(**d)


def cross_validate(dataset, model_cfg, train_cfg, jobs=1):
    """K-fold CV (or a single holdout split when ``k_folds == 1``).

    Fold ``i`` trains with seed ``train_cfg.seed + i``; results do not depend
    on ``jobs``.
    """
    from .ablations import describe_variant

    if train_cfg.k_folds == 1:
        splits = holdout_split(len(dataset), train_cfg.holdout_fraction, train_cfg.seed)
    else:
        splits = kfold_split(len(dataset), train_cfg.k_folds, train_cfg.seed)
    desc = describe_variant(model_cfg)
    log.info(
        "built %s: %d cross-modal transformers, %d parameters",
        desc.kind, desc.cross_modal_transformers, desc.parameters,
    )
    args = [(dataset, model_cfg, train_cfg, i, idx) for i, idx in enumerate(splits)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            folds = list(pool.map(run_fold, *zip(*args)))
    else:
        folds = []
        for a in args:
            folds.append(run_fold(*a))
            log.info("fold %d: acc %.4f f1 %.4f", a[3], folds[-1].acc, folds[-1].f1)
    acc_mean, acc_std = mean_std([f.acc for f in folds])
    f1_mean, f1_std = mean_std([f.f1 for f in folds])
    return CVReport(
        variant=model_cfg.variant, folds=folds, acc_mean=acc_mean, acc_std=acc_std,
        f1_mean=f1_mean, f1_std=f1_std, cross_modal_transformers=desc.cross_modal_transformers,
        parameters=desc.parameters,
    )


def compare_runs(report_a, report_b, metrics=("acc", "f1")):
    """Welch t-test on per-fold scores of two reports (dicts or CVReports).

    A difference is flagged significant when ``p < 0.01``.
    """
    a = report_a.to_dict() if hasattr(report_a, "to_dict") else report_a
    b = report_b.to_dict() if hasattr(report_b, "to_dict") else report_b
    out = {"a": a.get("variant"), "b": b.get("variant"), "alpha": SIGNIFICANCE_LEVEL, "metrics": {}}
    for key in metrics:
        xa = [f[key] for f in a["folds"]]
        xb = [f[key] for f in b["folds"]]
        t, p = welch_t_test(xa, xb)
        out["metrics"][key] = {
            "mean_a": mean_std(xa)[0],
            "mean_b": mean_std(xb)[0],
            "t": t,
            "p": p,
            "significant": bool(p < SIGNIFICANCE_LEVEL),
        }
    return out
