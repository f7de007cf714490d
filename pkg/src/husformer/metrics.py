"""Classification metrics from a confusion matrix, and Welch's t-test."""

import math

import numpy as np

from .errors import DataError


def confusion_matrix(labels, preds, num_classes):
    """Rows are true classes, columns predicted classes."""
    labels = np.asarray(labels, dtype=np.int64)
    preds = np.asarray(preds, dtype=np.int64)
    if labels.shape != preds.shape:
        raise DataError(f"{labels.shape[0]} labels vs {preds.shape[0]} predictions")
    for arr, what in ((labels, "label"), (preds, "prediction")):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise DataError(f"{what} out of range [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def _one_vs_rest(confusion):
    cm = np.asarray(confusion, dtype=np.int64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise DataError(f"confusion matrix must be square, got shape {cm.shape}")
    if np.any(cm < 0):
        raise DataError("confusion matrix has negative entries")
    total = int(cm.sum())
    if total == 0:
        raise DataError("confusion matrix is empty")
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    tn = total - tp - fp - fn
    return tp, fp, fn, tn, total


def multiclass_avg_accuracy(confusion):
    """Mean over classes of the one-vs-rest accuracy ``(TP + TN) / N``."""
    tp, _, _, tn, total = _one_vs_rest(confusion)
    per_class = [(int(a) + int(b)) / total for a, b in zip(tp, tn)]
    return math.fsum(per_class) / len(per_class)


def multiclass_avg_f1(confusion):
    """Mean over classes of one-vs-rest F1; a class with zero precision and
    recall contributes 0."""
    tp, fp, fn, _, _ = _one_vs_rest(confusion)
    per_class = []
    for t, p, n in zip(tp.tolist(), fp.tolist(), fn.tolist()):
        precision = t / (t + p) if t + p else 0.0
        recall = t / (t + n) if t + n else 0.0
        denom = precision + recall
        per_class.append(2.0 * precision * recall / denom if denom else 0.0)
    return math.fsum(per_class) / len(per_class)


def hard_label_mae(labels, preds):
    """Mean absolute difference between integer labels and predicted labels."""
    labels = np.asarray(labels, dtype=np.float64)
    preds = np.asarray(preds, dtype=np.float64)
    return float(np.abs(labels - preds).mean())


# -- Welch's t-test -------------------------------------------------------------


def _betacf(a, b, x, max_iter=500, tol=1e-15):
    # Modified Lentz evaluation of the incomplete-beta continued fraction.
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def regularized_incomplete_beta(a, b, x):
    """``I_x(a, b)`` for ``a, b > 0`` and ``0 <= x <= 1``."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t, df):
    if math.isinf(t):
        return 0.0
    return regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))


def welch_t_test(a, b):
    """Welch's unequal-variance t statistic and two-sided p-value.

    Both samples with zero variance give ``(0, 1)`` for equal means and
    ``(+-inf, 0)`` otherwise.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise DataError(f"each sample needs at least 2 values, got {a.size} and {b.size}")
    na, nb = a.size, b.size
    ma, mb = a.mean(), b.mean()
    va, vb = a.var(ddof=1), b.var(ddof=1)
    sa, sb = va / na, vb / nb
    se2 = sa + sb
    diff = ma - mb
    if se2 == 0.0:
        if diff == 0.0:
            return 0.0, 1.0
        return math.copysign(math.inf, diff), 0.0
    t = diff / math.sqrt(se2)
    df = se2 * se2 / (sa * sa / (na - 1) + sb * sb / (nb - 1))
    return float(t), student_t_two_sided_p(t, df)
