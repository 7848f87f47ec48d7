"""Template fusion and biometric verification / identification metrics.

Conventions shared by every metric here and by the test oracles:

* a score is accepted at threshold ``t`` when ``score >= t``;
* candidate thresholds are the observed scores plus ``nextafter(max(neg))``,
  the smallest float that rejects every negative;
* ranking ties keep gallery order (stable sort).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import DTYPE

FPR_LEVELS = (1e-4, 1e-3, 1e-2, 1e-1)
FPIR_LEVELS = (1e-2, 1e-1)
RANKS = (1, 10)


def fuse_template(media_groups):
    """Average frames within each media, then average the media."""
    means = [np.mean(np.asarray(m, dtype=DTYPE), axis=0) for m in media_groups if len(m)]
    if not means:
        raise ValueError("template has no frames")
    return np.mean(means, axis=0)


def cosine(a, b):
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine of a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def cosine_matrix(a, b):
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    if np.any(na == 0) or np.any(nb == 0):
        raise ValueError("cosine of a zero vector")
    return np.clip((a / na) @ (b / nb).T, -1.0, 1.0)


@dataclass
class OperatingPoint:
    level: float
    threshold: float
    value: float
    reachable: bool = True


def _threshold_at(neg, candidates, level):
    """Smallest candidate t with fraction(neg >= t) <= level."""
    neg_sorted = np.sort(neg)
    cand = np.unique(candidates)
    # count of negatives >= t for each candidate
    n_acc = len(neg_sorted) - np.searchsorted(neg_sorted, cand, side="left")
    ok = n_acc / len(neg_sorted) <= level
    return float(cand[np.argmax(ok)])  # ok is monotone and true for the sentinel


def tpr_at_fpr(pos, neg, levels=FPR_LEVELS):
    pos = np.asarray(pos, dtype=DTYPE)
    neg = np.asarray(neg, dtype=DTYPE)
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("need positive and negative scores")
    sentinel = np.nextafter(neg.max(), np.inf)
    candidates = np.concatenate([pos, neg, [sentinel]])
    out = []
    for level in levels:
        if not 0 < level < 1:
            raise ValueError("levels must lie in (0, 1)")
        reachable = level * len(neg) >= 1
        t = _threshold_at(neg, candidates, level) if reachable else float(sentinel)
        out.append(OperatingPoint(level, t, float(np.mean(pos >= t)), reachable))
    return out


def kfold_verification(scores, labels, folds):
    """Held-out accuracy with the threshold tuned on the remaining folds.

    Returns ``(mean, sd, per_fold)``; the tuned threshold maximizes training
    accuracy, ties going to the smallest threshold.
    """
    scores = np.asarray(scores, dtype=DTYPE)
    labels = np.asarray(labels).astype(bool)
    folds = np.asarray(folds)
    ks = np.unique(folds)
    if len(ks) < 2:
        raise ValueError("need at least two folds")
    accs = []
    for k in ks:
        test = folds == k
        train = ~test
        if not test.any() or not train.any():
            raise ValueError(f"fold {k} is empty")
        t = best_threshold(scores[train], labels[train])
        accs.append(float(np.mean((scores[test] >= t) == labels[test])))
    return float(np.mean(accs)), float(np.std(accs)), accs


def best_threshold(scores, labels):
    s = np.asarray(scores, dtype=DTYPE)
    y = np.asarray(labels).astype(bool)
    cand = np.unique(np.concatenate([s, [np.nextafter(s.max(), np.inf)]]))
    pos = np.sort(s[y])
    neg = np.sort(s[~y])
    tp = len(pos) - np.searchsorted(pos, cand, side="left")
    tn = np.searchsorted(neg, cand, side="left")
    correct = tp + tn
    return float(cand[np.argmax(correct)])  # argmax takes the first, i.e. smallest


def _ranked(sim):
    return np.argsort(-sim, axis=1, kind="stable")


def rank_k(probe_emb, probe_subjects, gallery_emb, gallery_subjects, ks=RANKS):
    probe_subjects = np.asarray(probe_subjects)
    gallery_subjects = np.asarray(gallery_subjects)
    missing = set(probe_subjects.tolist()) - set(gallery_subjects.tolist())
    if missing:
        raise ValueError(f"probe subjects absent from gallery: {sorted(missing)[:5]}")
    order = _ranked(cosine_matrix(probe_emb, gallery_emb))
    hits = gallery_subjects[order] == probe_subjects[:, None]
    first = np.argmax(hits, axis=1)  # every row has a hit (closed set)
    return {int(k): float(np.mean(first < k)) for k in ks}


def tpir_at_fpir(known_emb, known_subjects, unknown_emb, gallery_emb, gallery_subjects, levels=FPIR_LEVELS):
    gallery_subjects = np.asarray(gallery_subjects)
    known_subjects = np.asarray(known_subjects)
    sim_k = cosine_matrix(known_emb, gallery_emb)
    sim_u = cosine_matrix(unknown_emb, gallery_emb)
    top = np.argmax(sim_k, axis=1)  # first index on ties
    top_score = sim_k[np.arange(len(top)), top]
    correct = gallery_subjects[top] == known_subjects
    neg = sim_u.max(axis=1)
    sentinel = np.nextafter(neg.max(), np.inf)
    candidates = np.concatenate([top_score, neg, [sentinel]])
    out = []
    for level in levels:
        if not 0 < level < 1:
            raise ValueError("levels must lie in (0, 1)")
        reachable = level * len(neg) >= 1
        t = _threshold_at(neg, candidates, level) if reachable else float(sentinel)
        out.append(OperatingPoint(level, t, float(np.mean(correct & (top_score >= t))), reachable))
    return out


def fuse_all(protocols, frame_embeddings):
    """Fused embedding per template id, in protocol order."""
    return {
        tid: fuse_template([frame_embeddings[m] for m in t["media"]])
        for tid, t in protocols.templates.items()
    }


def evaluate(protocols, frame_embeddings, fpr_levels=FPR_LEVELS, fpir_levels=FPIR_LEVELS, ranks=RANKS):
    """All four protocols; returns report rows (protocol, level, threshold, value)."""
    fused = fuse_all(protocols, frame_embeddings)
    a = np.stack([fused[p[0]] for p in protocols.pairs])
    b = np.stack([fused[p[1]] for p in protocols.pairs])
    labels = np.array([p[2] for p in protocols.pairs], dtype=bool)
    unit_a = a / np.linalg.norm(a, axis=1, keepdims=True)
    unit_b = b / np.linalg.norm(b, axis=1, keepdims=True)
    scores = np.clip(np.sum(unit_a * unit_b, axis=1), -1.0, 1.0)
    rows = []
    for op in tpr_at_fpr(scores[labels], scores[~labels], fpr_levels):
        rows.append({"protocol": "TPR@FPR", "level": op.level, "threshold": op.threshold, "value": op.value,
                     "reachable": op.reachable})
    mean, sd, _ = kfold_verification(scores, labels, protocols.folds)
    rows.append({"protocol": "kfold_accuracy", "level": None, "threshold": None, "value": mean, "sd": sd})
    g_emb = np.stack([fused[t] for t, _ in protocols.gallery])
    g_sub = [s for _, s in protocols.gallery]
    k_emb = np.stack([fused[t] for t, _ in protocols.known_probes])
    k_sub = [s for _, s in protocols.known_probes]
    for k, v in rank_k(k_emb, k_sub, g_emb, g_sub, ranks).items():
        rows.append({"protocol": "rank", "level": k, "threshold": None, "value": v})
    u_emb = np.stack([fused[t] for t, _ in protocols.unknown_probes])
    for op in tpir_at_fpir(k_emb, k_sub, u_emb, g_emb, g_sub, fpir_levels):
        rows.append({"protocol": "TPIR@FPIR", "level": op.level, "threshold": op.threshold, "value": op.value,
                     "reachable": op.reachable})
    return rows


def auc(pos, neg):
    """Probability a positive outscores a negative, ties counting one half."""
    pos = np.asarray(pos, dtype=DTYPE)
    neg = np.asarray(neg, dtype=DTYPE)
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("auc needs both classes")
    neg = np.sort(neg)
    below = np.searchsorted(neg, pos, side="left")
    tied = np.searchsorted(neg, pos, side="right") - below
    return float(np.sum(below + 0.5 * tied) / (len(pos) * len(neg)))


def metric(rows, protocol, level=None):
    for r in rows:
        if r["protocol"] == protocol and (level is None or r["level"] == level):
            return r["value"]
    raise KeyError((protocol, level))
