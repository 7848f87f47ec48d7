"""Slow, independent reference implementations of the evaluation metrics.

Everything here walks sorted lists with explicit loops so it shares no
vectorized code with the package.  The convention matches the package:
accept when score >= t; candidate thresholds are the observed scores plus the
next float above the largest negative.
"""

import math

import numpy as np


def count_at_least(sorted_values, thresholds):
    """For ascending thresholds, how many values are >= each (two-pointer sweep)."""
    out = []
    i = 0
    n = len(sorted_values)
    for t in thresholds:
        while i < n and sorted_values[i] < t:
            i += 1
        out.append(n - i)
    return out


def sweep_threshold(neg, candidates, level):
    """Smallest candidate whose false-accept fraction is <= level (unreachable -> sentinel)."""
    neg = sorted(float(v) for v in neg)
    sentinel = math.nextafter(neg[-1], math.inf)
    if level * len(neg) < 1:
        return sentinel, False
    cand = sorted(set(float(c) for c in candidates) | {sentinel})
    for t, c in zip(cand, count_at_least(neg, cand)):
        if c / len(neg) <= level:
            return t, True
    raise AssertionError("sentinel always qualifies")


def tpr_at_fpr(pos, neg, levels):
    out = []
    for level in levels:
        t, reachable = sweep_threshold(neg, list(pos) + list(neg), level)
        out.append((t, sum(1 for p in pos if p >= t) / len(pos), reachable))
    return out


def kfold(scores, labels, folds):
    accs = []
    for k in sorted(set(folds)):
        train = [(s, y) for s, y, f in zip(scores, labels, folds) if f != k]
        test = [(s, y) for s, y, f in zip(scores, labels, folds) if f == k]
        pos = sorted(s for s, y in train if y)
        neg = sorted(s for s, y in train if not y)
        cand = sorted(set(s for s, _ in train) | {math.nextafter(max(s for s, _ in train), math.inf)})
        tp = count_at_least(pos, cand)
        fp = count_at_least(neg, cand)
        best_t, best_correct = None, -1
        for t, a, b in zip(cand, tp, fp):
            correct = a + (len(neg) - b)
            if correct > best_correct:
                best_t, best_correct = t, correct
        accs.append(sum(1 for s, y in test if (s >= best_t) == bool(y)) / len(test))
    return float(np.mean(accs)), accs


def ranking(sim_row):
    """Gallery indices by descending similarity, ties in gallery order."""
    return sorted(range(len(sim_row)), key=lambda j: (-sim_row[j], j))


def rank_k(sim, probe_subjects, gallery_subjects, ks):
    firsts = []
    for i, row in enumerate(sim):
        order = ranking(row)
        firsts.append(next(r for r, j in enumerate(order) if gallery_subjects[j] == probe_subjects[i]))
    return {k: sum(1 for f in firsts if f < k) / len(firsts) for k in ks}


def tpir_at_fpir(sim_known, known_subjects, sim_unknown, gallery_subjects, levels):
    tops = []
    for i, row in enumerate(sim_known):
        j = ranking(row)[0]
        tops.append((row[j], gallery_subjects[j] == known_subjects[i]))
    neg = [max(row) for row in sim_unknown]
    out = []
    for level in levels:
        t, reachable = sweep_threshold(neg, [s for s, _ in tops] + neg, level)
        out.append((t, sum(1 for s, ok in tops if ok and s >= t) / len(tops), reachable))
    return out


def random_verification(rng, max_scores=10_000, quantize=True):
    """Random pos/neg score sets; quantized so ties are common."""
    n_pos = int(rng.integers(1, max_scores // 4))
    n_neg = int(rng.integers(1, max_scores - n_pos))
    pos = rng.normal(1.0, 1.0, n_pos)
    neg = rng.normal(0.0, 1.0, n_neg)
    if quantize:
        pos, neg = np.round(pos, 2), np.round(neg, 2)
    return pos, neg


def random_identification(rng, max_gallery=40, dim=4):
    """Integer-valued embeddings (lots of exact ties) for a closed/open-set instance."""
    n_subjects = int(rng.integers(2, max_gallery))
    gallery = rng.integers(-2, 3, size=(n_subjects, dim)).astype(float)
    gallery[np.all(gallery == 0, axis=1), 0] = 1.0
    subjects = np.array([f"s{i}" for i in range(n_subjects)])
    n_known = int(rng.integers(1, 60))
    n_unknown = int(rng.integers(1, 60))
    known = rng.integers(-2, 3, size=(n_known, dim)).astype(float)
    known[np.all(known == 0, axis=1), 0] = 1.0
    known_subjects = subjects[rng.integers(0, n_subjects, n_known)]
    unknown = rng.integers(-2, 3, size=(n_unknown, dim)).astype(float)
    unknown[np.all(unknown == 0, axis=1), 1] = 1.0
    return gallery, subjects, known, known_subjects, unknown
