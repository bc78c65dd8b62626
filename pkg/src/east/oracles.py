"""Slow, loop-based reference implementations.

These deliberately share no code with the vectorized paths they check:
plain Python loops over samples, math.sqrt, no numpy broadcasting.
Used by the test suite and by ``east selftest``.
"""
import math


def _norm(u, w):
    return math.sqrt(sum((a - b) ** 2 for a, b in zip(u, w)))


def dcor_loss_naive(l_rows, v_rows):
    """1 - R^2_n for one frame, from two lists of equal-length row vectors."""
    n = len(l_rows)

    def centered(rows):
        a = [[_norm(rows[i], rows[j]) for j in range(n)] for i in range(n)]
        row_mean = [sum(a[i][j] for j in range(n)) / n for i in range(n)]
        col_mean = [sum(a[i][j] for i in range(n)) / n for j in range(n)]
        grand = sum(sum(r) for r in a) / (n * n)
        return [[a[i][j] - row_mean[i] - col_mean[j] + grand for j in range(n)] for i in range(n)]

    A = centered(l_rows)
    B = centered(v_rows)
    vab = vaa = vbb = 0.0
    for i in range(n):
        for j in range(n):
            vab += A[i][j] * B[i][j]
            vaa += A[i][j] * A[i][j]
            vbb += B[i][j] * B[i][j]
    vab /= n * n
    vaa /= n * n
    vbb /= n * n
    return 1.0 - vab / math.sqrt(vaa * vbb)


def dcor_loss_naive_frames(student, teacher):
    """Average of :func:`dcor_loss_naive` over frames; inputs are n x T x C nested lists/arrays."""
    n = len(student)
    frames = len(student[0])
    total = 0.0
    for t in range(frames):
        total += dcor_loss_naive([list(student[i][t]) for i in range(n)],
                                 [list(teacher[i][t]) for i in range(n)])
    return total / frames


def cos_diff_naive(l_rows, v_rows):
    def dcos(u, w):
        dot = sum(a * b for a, b in zip(u, w))
        nu = math.sqrt(sum(a * a for a in u))
        nw = math.sqrt(sum(b * b for b in w))
        return 1.0 - dot / (nu * nw)

    n = len(l_rows)
    total, pairs = 0.0, 0
    for i in range(n):
        for j in range(i + 1, n):
            total += abs(dcos(l_rows[i], l_rows[j]) - dcos(v_rows[i], v_rows[j]))
            pairs += 1
    return total / pairs


def average_precision_naive(scores, labels):
    """Precision at each positive, with rank = items scored higher, ties by lower index."""
    n = len(scores)

    def rank(i):
        return sum(1 for j in range(n) if scores[j] > scores[i] or (scores[j] == scores[i] and j < i)) + 1

    pos = [i for i in range(n) if labels[i]]
    total = 0.0
    for i in pos:
        r = rank(i)
        hits = sum(1 for k in pos if rank(k) <= r)
        total += hits / r
    return total / len(pos)


def roc_auc_naive(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def f1_confusion_naive(pred, truth):
    """Mean of positive-class and negative-class F1 from explicit confusion counts."""
    tp = sum(1 for p, y in zip(pred, truth) if p and y)
    fp = sum(1 for p, y in zip(pred, truth) if p and not y)
    fn = sum(1 for p, y in zip(pred, truth) if not p and y)
    tn = sum(1 for p, y in zip(pred, truth) if not p and not y)
    f_pos = 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else 0.0
    f_neg = 2 * tn / (2 * tn + fn + fp) if (2 * tn + fn + fp) else 0.0
    return (f_pos + f_neg) / 2
