"""Independent brute-force oracles, written before (and apart from) the
implementations they check. Table-driven and O(n^2) on purpose."""

from __future__ import annotations

import numpy as np

# --- rule-engine oracle ----------------------------------------------------
# Bracket tables as (inclusive_low, exclusive_high, multiplier) rows, scanned
# linearly; None bounds mean open-ended.

SNOT_TABLE = [
    (None, 25, 0.5),
    (25, 40, 0.7),
    (40, 60, 1.0),
    (60, 80, 1.1),
    (80, None, 1.2),
]
ENDO_TABLE = [
    (None, 4, 0.8),
    (4, 7, 0.9),
    (7, 11, 1.0),
    (11, None, 1.1),
]
CT_TABLE = [
    (None, 7, 0.85),
    (7, 13, 1.0),
    (13, None, 1.1),
]
PENALTIES = {
    "depression": 0.7,
    "fibromyalgia": 0.7,
    "smoker": 0.85,
    "copd": 0.8,
    "asthma": 0.9,
    "osa": 0.9,
    "diabetes": 0.9,
    "gerd": 0.95,
    "asa_intolerance": 0.9,
    "previous_surgery": 0.85,
}
CONFIDENCE_TABLE = [
    (15.0, None, "very confident"),
    (10.0, 15.0, "somewhat confident"),
    (6.0, 10.0, "neutral"),
    (3.0, 6.0, "somewhat unsure"),
    (0.0, 3.0, "not at all confident"),
]


def _lookup(table, value):
    for lo, hi, mult in table:
        if (lo is None or value >= lo) and (hi is None or value < hi):
            return mult
    raise AssertionError(f"no bracket for {value}")


def oracle_rule(baseline, endo, ct, polyps, flags: dict, age):
    """Full rule chain as a flat table walk. Returns (delta, label, confidence)."""
    delta = 0.45 * baseline
    delta *= _lookup(SNOT_TABLE, baseline)
    delta *= _lookup(ENDO_TABLE, endo)
    delta *= _lookup(CT_TABLE, ct)
    if polyps:
        delta *= 1.05
    for name, on in flags.items():
        if on:
            delta *= PENALTIES[name]
    if age >= 65:
        delta *= 0.9
    label = 1 if delta > 9.0 else 0
    d = abs(delta - 9.0)
    confidence = None
    for lo, hi, word in CONFIDENCE_TABLE:
        if d >= lo and (hi is None or d < hi):
            confidence = word
            break
    return delta, label, confidence


# --- ranking-metric oracles ------------------------------------------------


def auc_pair_count(labels, scores) -> float:
    """O(n0*n1) explicit pair enumeration: concordant + half ties."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=float)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    diff = pos[:, None] - neg[None, :]
    return (np.sum(diff > 0) + 0.5 * np.sum(diff == 0)) / (len(pos) * len(neg))


def ap_step_sum(labels, scores) -> float:
    """AP as sum over distinct thresholds of (recall step) * precision."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=float)
    n_pos = int(np.sum(labels == 1))
    thresholds = sorted(set(scores.tolist()), reverse=True)
    ap = 0.0
    prev_recall = 0.0
    for t in thresholds:
        taken = scores >= t
        tp = int(np.sum(taken & (labels == 1)))
        precision = tp / int(np.sum(taken))
        recall = tp / n_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def paired_bootstrap_auc_diff_ci(labels, scores_a, scores_b, n_resamples=2000, seed=0):
    """Percentile CI of AUC(a) - AUC(b) under case-level paired resampling."""
    labels = np.asarray(labels)
    scores_a = np.asarray(scores_a, dtype=float)
    scores_b = np.asarray(scores_b, dtype=float)
    rng = np.random.default_rng(seed)
    n = len(labels)
    diffs = []
    while len(diffs) < n_resamples:
        idx = rng.integers(0, n, size=n)
        if len(np.unique(labels[idx])) < 2:
            continue
        diffs.append(
            auc_pair_count(labels[idx], scores_a[idx])
            - auc_pair_count(labels[idx], scores_b[idx])
        )
    return float(np.percentile(diffs, 2.5)), float(np.percentile(diffs, 97.5))
