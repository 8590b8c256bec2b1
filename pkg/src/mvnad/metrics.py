"""Detection and segmentation metrics: AUROC, max-F1, pixel AUROC and AUPRO.

Conventions pinned here: ties count one half in AUROC, F1 thresholds sit at
midpoints of distinct scores (plus +-inf) with ``score >= t`` meaning anomalous,
regions are 8-connected, and AUPRO integrates up to ``fpr_limit`` = 0.3.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from mvnad import kernels

EXACT_SWEEP_LIMIT = 1_000_000
QUANTILE_THRESHOLDS = 256


class MetricError(ValueError):
    pass


def _score_set(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.shape != y.shape:
        raise MetricError(f"{s.size} scores vs {y.size} labels")
    if s.size < 2 or y.all() or not y.any():
        raise MetricError("need both positive and negative labels")
    if not np.all(np.isfinite(s)):
        raise MetricError("scores must be finite")
    return s, y


def auroc(scores, labels) -> float:
    """Mann-Whitney U / (P N), ties counted one half."""
    s, y = _score_set(scores, labels)
    ranks = rankdata(s)  # average ranks for ties
    p = int(y.sum())
    n = s.size - p
    u = ranks[y].sum() - p * (p + 1) / 2.0
    return float(u / (p * n))


def f1_max(scores, labels) -> tuple[float, float]:
    """Best F1 over midpoint thresholds; equal F1 resolves to the lowest threshold."""
    s, y = _score_set(scores, labels)
    distinct = np.unique(s)
    thresholds = np.concatenate([[-np.inf], (distinct[:-1] + distinct[1:]) / 2.0, [np.inf]])
    # counts of positives / negatives with score >= t via sorted scores
    pos = np.sort(s[y])
    neg = np.sort(s[~y])
    tp = pos.size - np.searchsorted(pos, thresholds, side="left")
    fp = neg.size - np.searchsorted(neg, thresholds, side="left")
    fn = pos.size - tp
    denom = 2 * tp + fp + fn
    f1 = np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)
    best = int(np.argmax(f1))  # first maximum is the lowest threshold
    return float(f1[best]), float(thresholds[best])


def _pairs(maps, masks):
    if len(maps) != len(masks) or not maps:
        raise MetricError("need a nonempty list of (map, mask) pairs")
    out = []
    for i, (m, g) in enumerate(zip(maps, masks)):
        m = np.asarray(m, dtype=np.float64)
        g = np.asarray(g).astype(bool)
        if m.shape != g.shape or m.ndim != 2:
            raise MetricError(f"pair {i}: map {m.shape} vs mask {g.shape}")
        out.append((m, g))
    return out


def pixel_auroc(maps, masks) -> float:
    pairs = _pairs(maps, masks)
    s = np.concatenate([m.ravel() for m, _ in pairs])
    y = np.concatenate([g.ravel() for _, g in pairs])
    try:
        return auroc(s, y)
    except MetricError as exc:
        raise MetricError(f"pixel AUROC: {exc}") from None


def connected_components(mask) -> tuple[np.ndarray, int]:
    """8-connected labels 1..count numbered by row-major first pixel; 0 is background."""
    mask = np.ascontiguousarray(np.asarray(mask).astype(np.uint8))
    if mask.ndim != 2:
        raise MetricError("mask must be 2-D")
    labels, count = kernels.label_components(mask)
    return np.asarray(labels), int(count)


def _trapezoid_to_limit(fpr: np.ndarray, pro: np.ndarray, limit: float) -> float:
    """Area under the piecewise-linear curve on [0, limit]; points sorted by fpr."""
    area = 0.0
    for i in range(1, fpr.size):
        x0, x1 = fpr[i - 1], fpr[i]
        if x0 >= limit:
            break
        y0, y1 = pro[i - 1], pro[i]
        if x1 > limit:
            y1 = y0 + (y1 - y0) * (limit - x0) / (x1 - x0)
            x1 = limit
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def aupro(maps, masks, fpr_limit: float = 0.3) -> float:
    """Normalized area under PRO(FPR) for FPR in [0, fpr_limit]."""
    if not (0.0 < fpr_limit <= 1.0) or math.isnan(fpr_limit):
        raise MetricError(f"fpr_limit {fpr_limit} outside (0, 1]")
    pairs = _pairs(maps, masks)
    values, weights, negatives = [], [], []
    n_regions = 0
    for m, g in pairs:
        labels, count = connected_components(g)
        if count:
            sizes = np.bincount(labels.ravel(), minlength=count + 1)
            w = np.zeros(labels.shape)
            w[g] = 1.0 / sizes[labels[g]]
            values.append(m[g])
            weights.append(w[g])
        negatives.append(m[~g])
        n_regions += count
    if n_regions == 0:
        raise MetricError("AUPRO needs at least one anomalous pixel")
    pos_v = np.concatenate(values)
    pos_w = np.concatenate(weights) / n_regions
    neg_v = np.concatenate(negatives)
    if neg_v.size == 0:
        raise MetricError("AUPRO needs at least one normal pixel")

    distinct = np.unique(np.concatenate([pos_v, neg_v]))
    if distinct.size > EXACT_SWEEP_LIMIT:
        thresholds = np.unique(np.quantile(distinct, np.linspace(0.0, 1.0, QUANTILE_THRESHOLDS)))
    else:
        thresholds = distinct
    thresholds = thresholds[::-1]  # descending: curve runs from low FPR to high

    order = np.argsort(pos_v, kind="stable")
    sv, cw = pos_v[order], np.concatenate([[0.0], np.cumsum(pos_w[order])])
    total_w = cw[-1]
    # PRO(t) = total weight of anomalous pixels with value >= t
    # normalized by the (mathematically unit) total so saturation is exactly 1
    pro = (total_w - cw[np.searchsorted(sv, thresholds, side="left")]) / total_w
    neg_sorted = np.sort(neg_v)
    fpr = (neg_v.size - np.searchsorted(neg_sorted, thresholds, side="left")) / neg_v.size
    fpr = np.concatenate([[0.0], fpr])
    pro = np.concatenate([[0.0], pro])
    return float(_trapezoid_to_limit(fpr, pro, fpr_limit) / fpr_limit)


# --- run evaluation -------------------------------------------------------------

METRICS = ("i_auroc", "i_f1", "p_auroc", "p_aupro")


@dataclass
class ViewResult:
    category: str
    sample_id: str
    view: int
    score: float
    amap: np.ndarray
    mask: np.ndarray


@dataclass
class MetricRow:
    category: str
    view: str  # "all", "max" or a view index
    i_auroc: float
    i_f1: float
    p_auroc: float
    p_aupro: float

    def values(self) -> tuple[float, ...]:
        return tuple(getattr(self, k) for k in METRICS)


@dataclass
class MetricReport:
    rows: list[MetricRow] = field(default_factory=list)

    def get(self, category: str, view="all") -> MetricRow:
        for r in self.rows:
            if r.category == category and r.view == str(view):
                return r
        raise KeyError((category, view))

    def categories(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r.category not in seen:
                seen.append(r.category)
        return seen


def _safe(fn, *args, **kw) -> float:
    try:
        return fn(*args, **kw)
    except MetricError:
        return float("nan")


def _row(category, view, scores, labels, maps, masks, fpr_limit) -> MetricRow:
    return MetricRow(
        category,
        str(view),
        _safe(auroc, scores, labels),
        _safe(lambda s, y: f1_max(s, y)[0], scores, labels),
        _safe(pixel_auroc, maps, masks),
        _safe(aupro, maps, masks, fpr_limit=fpr_limit),
    )


def evaluate_category(category: str, results: list[ViewResult], n_views: int = 5,
                      fpr_limit: float = 0.3) -> list[MetricRow]:
    by_sample: dict[str, dict[int, ViewResult]] = {}
    for r in results:
        views = by_sample.setdefault(r.sample_id, {})
        if r.view in views:
            raise MetricError(f"{category}/{r.sample_id}: duplicate view {r.view}")
        views[r.view] = r
    for sid, views in by_sample.items():
        missing = sorted(set(range(n_views)) - set(views))
        if missing:
            raise MetricError(f"{category}/{sid}: missing views {missing}")
    sids = sorted(by_sample)
    sample_label = [any(by_sample[s][v].mask.any() for v in range(n_views)) for s in sids]
    every = [by_sample[s][v] for s in sids for v in range(n_views)]
    rows = [
        # per-view protocol: every view is its own image, labelled by its own mask
        _row(category, "all", [r.score for r in every], [r.mask.any() for r in every],
             [r.amap for r in every], [r.mask for r in every], fpr_limit),
        # per-sample aggregation: max score over views, sample label
        _row(category, "max", [max(by_sample[s][v].score for v in range(n_views)) for s in sids],
             sample_label, [r.amap for r in every], [r.mask for r in every], fpr_limit),
    ]
    for v in range(n_views):
        # single-view detector: view v alone decides the sample
        vr = [by_sample[s][v] for s in sids]
        rows.append(_row(category, v, [r.score for r in vr], sample_label,
                         [r.amap for r in vr], [r.mask for r in vr], fpr_limit))
    return rows


def evaluate_run(results: list[ViewResult], n_views: int = 5, fpr_limit: float = 0.3) -> MetricReport:
    """Per-category rows for views "all", "max", 0..n_views-1, plus the macro "mean" category."""
    if not results:
        raise MetricError("no results to evaluate")
    cats: dict[str, list[ViewResult]] = {}
    for r in results:
        cats.setdefault(r.category, []).append(r)
    report = MetricReport()
    for cat in cats:
        report.rows += evaluate_category(cat, cats[cat], n_views, fpr_limit)
    views = [r.view for r in report.rows if r.category == next(iter(cats))]
    for v in views:
        per_cat = np.array([report.get(c, v).values() for c in cats])
        means = []
        for col in per_cat.T:
            finite = col[~np.isnan(col)]
            means.append(float(finite.mean()) if finite.size else float("nan"))
        report.rows.append(MetricRow("mean", v, *means))
    return report


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.6f}"


def report_csv(report: MetricReport) -> str:
    lines = ["category,view," + ",".join(METRICS)]
    for r in report.rows:
        lines.append(f"{r.category},{r.view}," + ",".join(_fmt(x) for x in r.values()))
    return "\n".join(lines) + "\n"


def parse_report_csv(text: str) -> MetricReport:
    lines = [l for l in text.splitlines() if l.strip() and not l.startswith("#")]
    if not lines or lines[0] != "category,view," + ",".join(METRICS):
        raise MetricError("not a metric report CSV")
    rows = []
    for l in lines[1:]:
        cat, view, *vals = l.split(",")
        rows.append(MetricRow(cat, view, *(float(v) for v in vals)))
    return MetricReport(rows)


def report_table(report: MetricReport, view: str = "all") -> str:
    """Aligned text table: one row per category, the macro mean last."""
    header = ["Category", "I-AUROC", "I-F1", "P-AUROC", "P-AUPRO"]
    body = [[r.category] + ["nan" if math.isnan(x) else f"{x:.3f}" for x in r.values()]
            for r in report.rows if r.view == str(view)]
    body.sort(key=lambda row: row[0] == "mean")
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths)))
             for row in [header] + body]
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines) + "\n"
