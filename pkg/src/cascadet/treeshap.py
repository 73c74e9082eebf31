"""Exact Shapley attribution for the forest, with a brute-force oracle.

Both routes compute interventional (background-marginalized) Shapley values
of the forest's probability output: the coalition value of a feature set S
is the mean over background rows b of predict_proba on the hybrid input
taking S's features from x and the rest from b.

explain_exact_bruteforce enumerates all 2^M coalitions (M <= 16 only).

explain_treeshap gets the same numbers in polynomial time. Each leaf's root
path is an axis-aligned box; for a pair (x, b) a hybrid input reaches the
leaf iff every "divergent" feature (where exactly one of x, b is inside the
box interval) takes its value from the right source. That makes the leaf's
coalition game an AND-indicator over A (features that must come from x) and
B (features that must not), whose Shapley values have the closed form

    phi_i = +leaf_value * (a-1)! b! / (a+b)!   for i in A
    phi_i = -leaf_value * a! (b-1)! / (a+b)!   for i in B

with a = |A|, b = |B|. Summing over leaves, trees, and background rows is
exact by linearity. The implementation pads each leaf's constraints to a
fixed width and vectorizes over (background row, leaf, constraint); padding
columns are always-inside intervals, which cancel identically.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from cascadet.data.types import N_CLASSES
from cascadet.features import STAT_NAMES
from cascadet.forest import Forest, TreeNode, predict_proba_batch

MAX_BRUTEFORCE_FEATURES = 16


@dataclass
class AttributionReport:
    """Per-feature, per-class Shapley values plus per-sensor aggregates."""

    phi: np.ndarray  # [n_features x 4]
    base_value: np.ndarray  # [4]
    feature_names: tuple[str, ...]
    sensor_aggregates: dict[str, float] = field(default_factory=dict)

    def reconstruction(self) -> np.ndarray:
        """base + sum(phi) per class; equals predict_proba(x) by local accuracy."""
        return self.base_value + self.phi.sum(axis=0)


def _shapley_pair_weights(max_m: int) -> np.ndarray:
    """W[p, q] = p! q! / (p + q + 1)! for p, q in [0, max_m]."""
    w = np.zeros((max_m + 1, max_m + 1))
    for p in range(max_m + 1):
        for q in range(max_m + 1):
            w[p, q] = 1.0 / ((p + q + 1) * math.comb(p + q, p))
    return w


# ---------------------------------------------------------------------------
# Brute-force oracle: full 2^M coalition enumeration.
# ---------------------------------------------------------------------------


def coalition_values(
    forest: Forest, x: np.ndarray, background: np.ndarray, chunk: int = 4096
) -> np.ndarray:
    """f_x(S) for every coalition bitmask, [2^M x 4]."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    background = np.atleast_2d(np.asarray(background, dtype=np.float64))
    m = x.shape[0]
    n_subsets = 1 << m
    bit_cols = np.arange(m)
    values = np.empty((n_subsets, N_CLASSES))
    for start in range(0, n_subsets, chunk):
        stop = min(start + chunk, n_subsets)
        masks = ((np.arange(start, stop)[:, None] >> bit_cols) & 1).astype(bool)
        hybrids = np.where(masks[:, None, :], x[None, None, :], background[None, :, :])
        flat = hybrids.reshape(-1, m)
        probs = predict_proba_batch(forest, flat).reshape(stop - start, background.shape[0], N_CLASSES)
        values[start:stop] = probs.mean(axis=1)
    return values


def explain_exact_bruteforce(
    forest: Forest,
    x: np.ndarray,
    background: np.ndarray,
    feature_names: Optional[Sequence[str]] = None,
) -> AttributionReport:
    """Exact Shapley values by enumerating every coalition. Refuses M > 16."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    m = x.shape[0]
    if m != forest.n_features:
        raise ValueError(f"x has {m} features, forest expects {forest.n_features}")
    if m > MAX_BRUTEFORCE_FEATURES:
        raise ValueError(
            f"brute-force enumeration refuses {m} features (> {MAX_BRUTEFORCE_FEATURES})"
        )
    background = np.atleast_2d(np.asarray(background, dtype=np.float64))
    if background.shape[0] == 0:
        raise ValueError("background must be non-empty")

    values = coalition_values(forest, x, background)
    popcount = ((np.arange(1 << m)[:, None] >> np.arange(m)) & 1).sum(axis=1)
    # w[k] = k! (m - k - 1)! / m!
    coeff = np.array([1.0 / (m * math.comb(m - 1, k)) for k in range(m)])
    phi = np.zeros((m, N_CLASSES))
    subsets = np.arange(1 << m)
    for i in range(m):
        bit = 1 << i
        without = subsets[(subsets & bit) == 0]
        w = coeff[popcount[without]]
        phi[i] = (w[:, None] * (values[without | bit] - values[without])).sum(axis=0)

    return _finish_report(phi, values[0], feature_names, m)


# ---------------------------------------------------------------------------
# Polynomial-time interventional algorithm over leaf path boxes.
# ---------------------------------------------------------------------------


def _collect_leaf_boxes(root: TreeNode, n_features: int):
    """(constraints, leaf_prob) per leaf; a constraint set maps feature -> (lo, hi]."""
    out: list[tuple[dict[int, tuple[float, float]], np.ndarray]] = []

    def walk(node: TreeNode, bounds: dict[int, tuple[float, float]]) -> None:
        if node.is_leaf:
            out.append((dict(bounds), node.probability))
            return
        f, t = node.feature_index, node.threshold
        lo, hi = bounds.get(f, (-math.inf, math.inf))
        left_bounds = dict(bounds)
        left_bounds[f] = (lo, min(hi, t))
        walk(node.left, left_bounds)
        right_bounds = dict(bounds)
        right_bounds[f] = (max(lo, t), hi)
        walk(node.right, right_bounds)

    walk(root, {})
    return out


class TreeShapExplainer:
    """Precomputes background-side structures once; explain() is then cheap.

    Memory scales with n_background x n_leaves x max_constraints; the
    background loop is chunked to keep peak usage modest.
    """

    def __init__(
        self,
        forest: Forest,
        background: np.ndarray,
        feature_names: Optional[Sequence[str]] = None,
        chunk_rows: int = 16,
    ) -> None:
        self.forest = forest
        self.background = np.atleast_2d(np.asarray(background, dtype=np.float64))
        if self.background.shape[0] == 0:
            raise ValueError("background must be non-empty")
        if self.background.shape[1] != forest.n_features:
            raise ValueError("background feature dimension mismatch")
        self.feature_names = (
            tuple(feature_names)
            if feature_names is not None
            else tuple(f"f{i}" for i in range(forest.n_features))
        )

        leaves: list[tuple[dict[int, tuple[float, float]], np.ndarray]] = []
        for tree in forest.trees:
            leaves.extend(_collect_leaf_boxes(tree, forest.n_features))
        self.n_leaves = len(leaves)
        width = max((len(c) for c, _ in leaves), default=0)
        self.width = max(width, 1)

        self.leaf_prob = np.stack([p for _, p in leaves])
        self.feat_pad = np.zeros((self.n_leaves, self.width), dtype=np.int64)
        self.lo_pad = np.full((self.n_leaves, self.width), -np.inf)
        self.hi_pad = np.full((self.n_leaves, self.width), np.inf)
        for li, (constraints, _) in enumerate(leaves):
            for ci, (f, (lo, hi)) in enumerate(sorted(constraints.items())):
                self.feat_pad[li, ci] = f
                self.lo_pad[li, ci] = lo
                self.hi_pad[li, ci] = hi

        self._wtab = _shapley_pair_weights(self.width + 1)
        # Background-side membership, chunked over rows.
        self._chunks: list[tuple[np.ndarray, np.ndarray]] = []
        for start in range(0, self.background.shape[0], chunk_rows):
            rows = self.background[start : start + chunk_rows]
            vals = rows[:, self.feat_pad]  # [r x L x C]
            inside = (vals > self.lo_pad) & (vals <= self.hi_pad)
            self._chunks.append((inside.astype(np.float64), inside.sum(axis=2).astype(np.float64)))
        self.base_value = predict_proba_batch(forest, self.background).mean(axis=0)

    def explain(self, x: np.ndarray) -> AttributionReport:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.shape[0] != self.forest.n_features:
            raise ValueError("x feature dimension mismatch")
        xv = x[self.feat_pad]
        x_in = ((xv > self.lo_pad) & (xv <= self.hi_pad)).astype(np.float64)  # [L x C]
        x_count = x_in.sum(axis=1)

        width = self.width
        s_a = np.zeros(self.n_leaves)
        u_a = np.zeros((self.n_leaves, width))
        u_b = np.zeros((self.n_leaves, width))
        for bg_in, bg_count in self._chunks:
            cross = np.einsum("rlc,lc->rl", bg_in, x_in)
            a = np.rint(x_count[None, :] - cross).astype(np.int64)
            b = np.rint(bg_count - cross).astype(np.int64)
            both_out = width - x_count[None, :] - bg_count + cross
            reach = np.abs(both_out) < 0.5
            w_a = np.where(
                reach & (a > 0), self._wtab[np.maximum(a - 1, 0), b], 0.0
            )
            w_b = np.where(
                reach & (b > 0), self._wtab[a, np.maximum(b - 1, 0)], 0.0
            )
            s_a += w_a.sum(axis=0)
            u_a += np.einsum("rlc,rl->lc", bg_in, w_a)
            u_b += np.einsum("rlc,rl->lc", bg_in, w_b)

        t_a = x_in * (s_a[:, None] - u_a)
        t_b = (1.0 - x_in) * u_b
        contrib = t_a - t_b  # [L x C], per (leaf, constraint) signed weight

        scale = 1.0 / (len(self.forest.trees) * self.background.shape[0])
        phi = np.zeros((self.forest.n_features, N_CLASSES))
        flat_feat = self.feat_pad.ravel()
        for c in range(N_CLASSES):
            weighted = (contrib * self.leaf_prob[:, c : c + 1]).ravel()
            phi[:, c] = np.bincount(
                flat_feat, weights=weighted, minlength=self.forest.n_features
            )
        phi *= scale
        return _finish_report(phi, self.base_value, self.feature_names, x.shape[0])


def explain_treeshap(
    forest: Forest,
    x: np.ndarray,
    background: np.ndarray,
    feature_names: Optional[Sequence[str]] = None,
) -> AttributionReport:
    """One-shot exact interventional attribution (builds a throwaway explainer)."""
    return TreeShapExplainer(forest, background, feature_names).explain(x)


def _finish_report(
    phi: np.ndarray,
    base_value: np.ndarray,
    feature_names: Optional[Sequence[str]],
    n_features: int,
) -> AttributionReport:
    names = (
        tuple(feature_names)
        if feature_names is not None
        else tuple(f"f{i}" for i in range(n_features))
    )
    if len(names) != n_features:
        raise ValueError("feature_names length mismatch")
    report = AttributionReport(
        phi=phi, base_value=np.asarray(base_value, dtype=np.float64), feature_names=names
    )
    try:
        report.sensor_aggregates = aggregate_by_sensor(report)
    except ValueError:
        report.sensor_aggregates = {}
    return report


# ---------------------------------------------------------------------------
# Per-sensor aggregation and exports.
# ---------------------------------------------------------------------------


def aggregate_by_sensor(
    report: AttributionReport, class_index: Optional[int] = None
) -> dict[str, float]:
    """Sum |phi| of the four statistical features per channel.

    Feature names must follow the "<channel>_<stat>" contract. By default the
    magnitude of each feature is the mean |phi| across the four classes; pass
    class_index for a single-class aggregation.
    """
    if class_index is None:
        magnitude = np.abs(report.phi).mean(axis=1)
    else:
        magnitude = np.abs(report.phi[:, class_index])
    per_channel: dict[str, dict[str, float]] = {}
    for name, value in zip(report.feature_names, magnitude):
        channel, _, stat = name.rpartition("_")
        if not channel or stat not in STAT_NAMES:
            raise ValueError(f"feature name {name!r} does not follow '<channel>_<stat>'")
        per_channel.setdefault(channel, {})[stat] = float(value)
    totals: dict[str, float] = {}
    for channel, stats in per_channel.items():
        if set(stats) != set(STAT_NAMES):
            raise ValueError(f"channel {channel!r} is missing stats: has {sorted(stats)}")
        totals[channel] = float(sum(stats.values()))
    return dict(sorted(totals.items(), key=lambda kv: -kv[1]))


def sensor_ranking(report: AttributionReport) -> list[tuple[str, float]]:
    """(channel, aggregate) pairs in descending importance."""
    return sorted(report.sensor_aggregates.items(), key=lambda kv: -kv[1])


def export_attribution_csv(report: AttributionReport, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "class", "phi"])
        for i, name in enumerate(report.feature_names):
            for c in range(N_CLASSES):
                writer.writerow([name, c, f"{report.phi[i, c]:.12g}"])


def export_attribution_json(report: AttributionReport, path: str | Path) -> None:
    payload = {
        "base_value": [float(v) for v in report.base_value],
        "reconstruction": [float(v) for v in report.reconstruction()],
        "sensor_ranking": [
            {"channel": ch, "aggregate": val} for ch, val in sensor_ranking(report)
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")
