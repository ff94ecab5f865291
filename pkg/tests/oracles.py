"""Brute-force reference implementations, written independently of the package."""
import math

import numpy as np


def _d2(a, b):
    return sum((float(x) - float(y)) ** 2 for x, y in zip(a, b))


def brute_fps(points, k, start):
    """Greedy max-min with a plain double loop; ties go to the lowest index."""
    chosen = [start]
    while len(chosen) < k:
        best, best_d = None, -1.0
        for i in range(len(points)):
            if i in chosen:
                continue
            d = min(_d2(points[i], points[j]) for j in chosen)
            if d > best_d:
                best, best_d = i, d
        chosen.append(best)
    return chosen


def brute_knn(query, points, t):
    pairs = sorted((math.sqrt(_d2(query, p)), i) for i, p in enumerate(points))
    return [i for _, i in pairs[:t]], [d for d, _ in pairs[:t]]


def brute_idw(query, points, features, t, eps=1e-8):
    idx, dist = brute_knn(query, points, t)
    if dist[0] <= eps:
        return [float(v) for v in features[idx[0]]]
    ws = [1.0 / max(d, eps) for d in dist]
    total = sum(ws)
    return [sum(w * float(features[i][c]) for w, i in zip(ws, idx)) / total for c in range(len(features[0]))]


def brute_f_score(preds, labels, threshold=0.5):
    tp = fp = fn = 0
    for p, y in zip(preds, labels):
        hit = p > threshold
        if hit and y:
            tp += 1
        elif hit:
            fp += 1
        elif y:
            fn += 1
    if tp == 0:
        return 0.0
    precision, recall = tp / (tp + fp), tp / (tp + fn)
    return 100.0 * 2 * precision * recall / (precision + recall)


def brute_average_precision(scores, labels):
    """Sum over distinct thresholds of (recall gain) x (best precision at that recall or beyond)."""
    positives = sum(1 for y in labels if y)
    if positives == 0:
        return 0.0
    points = []
    for thr in sorted(set(scores), reverse=True):
        sel = [y for s, y in zip(scores, labels) if s >= thr]
        tp = sum(1 for y in sel if y)
        points.append((tp / positives, tp / len(sel)))
    total, prev_recall = 0.0, 0.0
    for recall, _ in points:
        best = max(p for r, p in points if r >= recall)
        total += (recall - prev_recall) * best
        prev_recall = recall
    return 100.0 * total


# ------------------------------------------------------------------ finite differences
def input_grad_error(forward, backward, x, eps=1e-6, floor=1e-7):
    """Worst relative error of d(sum(R * f(x)))/dx against central differences."""
    rng = np.random.default_rng(0)
    out = forward(x)
    R = rng.normal(size=out.shape)
    analytic = backward(R)
    num = np.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        lp = np.sum(R * forward(x))
        flat[i] = orig - eps
        lm = np.sum(R * forward(x))
        flat[i] = orig
        num.reshape(-1)[i] = (lp - lm) / (2 * eps)
    forward(x)
    return float(np.max(np.abs(num - analytic) / np.maximum(np.maximum(np.abs(num), np.abs(analytic)), floor)))


def param_grad_error(module, x, eps=1e-6, floor=1e-7):
    """Worst relative error of every parameter gradient of ``sum(R * module(x))``."""
    R = np.random.default_rng(1).normal(size=module.forward(x).shape)
    params = module.parameters()
    for p in params:
        p.grad[...] = 0.0
    module.forward(x)
    module.backward(R)
    worst = 0.0
    for p in params:
        analytic = p.grad.copy().reshape(-1)
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp = np.sum(R * module.forward(x))
            flat[i] = orig - eps
            lm = np.sum(R * module.forward(x))
            flat[i] = orig
            num = (lp - lm) / (2 * eps)
            worst = max(worst, abs(num - analytic[i]) / max(abs(num), abs(analytic[i]), floor))
    return float(worst)


def sampled_grad_error(loss, backward, params, eps=1e-6, floor=1e-7, entries=None, rng=None):
    """Worst relative error over (a sample of) parameter entries.

    ``loss()`` runs a forward pass and returns a scalar; ``backward()``, called
    right after a forward pass, accumulates ``.grad`` on every parameter.
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.grad[...] = 0.0
    loss()
    backward()
    worst = 0.0
    for p in params:
        analytic = p.grad.copy().reshape(-1)
        flat = p.value.reshape(-1)
        picks = range(flat.size)
        if entries is not None and flat.size > entries:
            picks = rng.choice(flat.size, entries, replace=False)
        for i in picks:
            orig = flat[i]
            flat[i] = orig + eps
            lp = loss()
            flat[i] = orig - eps
            lm = loss()
            flat[i] = orig
            num = (lp - lm) / (2 * eps)
            worst = max(worst, abs(num - analytic[i]) / max(abs(num), abs(analytic[i]), floor))
    return float(worst)
