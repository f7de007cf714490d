"""Independent reference implementations shared by several test modules."""

import math

import mpmath


def brute_force_scores(labels, preds, c):
    """Per-class counts by direct enumeration, no confusion matrix."""
    n = len(labels)
    accs, f1s = [], []
    for k in range(c):
        tp = sum(1 for y, p in zip(labels, preds) if y == k and p == k)
        tn = sum(1 for y, p in zip(labels, preds) if y != k and p != k)
        fp = sum(1 for y, p in zip(labels, preds) if y != k and p == k)
        fn = sum(1 for y, p in zip(labels, preds) if y == k and p != k)
        accs.append((tp + tn) / n)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return math.fsum(accs) / c, math.fsum(f1s) / c


def welch_mpmath(a, b):
    mpmath.mp.dps = 50
    a = [mpmath.mpf(float(x)) for x in a]
    b = [mpmath.mpf(float(x)) for x in b]
    na, nb = len(a), len(b)
    ma, mb = sum(a) / na, sum(b) / nb
    va = sum((x - ma) ** 2 for x in a) / (na - 1)
    vb = sum((x - mb) ** 2 for x in b) / (nb - 1)
    se2 = va / na + vb / nb
    t = (ma - mb) / mpmath.sqrt(se2)
    df = se2 ** 2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    # two-sided tail of Student's t by direct quadrature of the density
    dens = lambda x: mpmath.gamma((df + 1) / 2) / (mpmath.sqrt(df * mpmath.pi) * mpmath.gamma(df / 2)) \
        * (1 + x * x / df) ** (-(df + 1) / 2)
    p = 2 * mpmath.quad(dens, [abs(t), mpmath.inf])
    return float(t), float(p)
