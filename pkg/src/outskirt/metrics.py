"""ROC-AUC, F1, TPR/FPR and fold bookkeeping.

Inliers are the positive class throughout (label 1); a prediction is
"inlier" when the classifier's decision score is strictly positive.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DataError


def _binary(labels):
    labels = np.asarray(labels).astype(int).ravel()
    if not np.isin(labels, (0, 1)).all():
        raise DataError("labels must be 0/1")
    return labels


def roc_auc(scores, labels):
    """Mann-Whitney AUC: P(score+ > score-) + 0.5 P(tie).

    Computed from mid-ranks, so every intermediate value is a multiple of
    0.5 and the result equals the pairwise count divided by n+ * n-.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = _binary(labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs both positive and negative labels")
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    ranks = np.empty(len(s))
    start = 0
    # mid-ranks (1-based) over runs of equal scores
    while start < len(s):
        stop = start + 1
        while stop < len(s) and s[stop] == s[start]:
            stop += 1
        ranks[order[start:stop]] = (start + stop + 1) / 2.0
        start = stop
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class Confusion:
    tp: int
    fn: int
    fp: int
    tn: int

    @classmethod
    def from_predictions(cls, pred, labels):
        pred = _binary(pred)
        labels = _binary(labels)
        return cls(
            tp=int(np.sum((pred == 1) & (labels == 1))),
            fn=int(np.sum((pred == 0) & (labels == 1))),
            fp=int(np.sum((pred == 1) & (labels == 0))),
            tn=int(np.sum((pred == 0) & (labels == 0))),
        )


def _ratio(num, den):
    """num / den, or (0.0, True) when the denominator vanishes."""
    if den == 0:
        return 0.0, True
    return num / den, False


def _f1(tp, fp, fn):
    p, _ = _ratio(tp, tp + fp)
    r, _ = _ratio(tp, tp + fn)
    f, _ = _ratio(2 * p * r, p + r)
    return p, r, f


@dataclass
class RateSummary:
    precision: float
    recall: float
    f1_inlier: float
    f1_weighted: float
    tpr: float
    fpr: float
    undefined: bool
    confusion: Confusion


def summarize(c):
    """All threshold metrics from a confusion matrix.

    ``f1_weighted`` is the support-weighted mean of the per-class F1 scores;
    ``f1_inlier`` the plain binary F1 of the inlier class.
    """
    flags = []
    p_in, r_in, f_in = _f1(c.tp, c.fp, c.fn)
    _, _, f_out = _f1(c.tn, c.fn, c.fp)
    n_pos, n_neg = c.tp + c.fn, c.tn + c.fp
    for num, den in ((c.tp, c.tp + c.fp), (c.tp, n_pos), (c.fp, n_neg)):
        flags.append(_ratio(num, den)[1])
    tpr, _ = _ratio(c.tp, n_pos)
    fpr, _ = _ratio(c.fp, n_neg)
    weighted, undefined = _ratio(f_in * n_pos + f_out * n_neg, n_pos + n_neg)
    return RateSummary(p_in, r_in, f_in, weighted, tpr, fpr, any(flags) or undefined, c)


def f1_weighted(pred, labels):
    return summarize(Confusion.from_predictions(pred, labels)).f1_weighted


def tpr_fpr(pred, labels):
    s = summarize(Confusion.from_predictions(pred, labels))
    return s.tpr, s.fpr


def kfold_split(n, k=5, seed=0):
    """Shuffle ``range(n)`` and cut it into ``k`` folds whose sizes differ by <= 1."""
    if k < 2:
        raise ConfigError("k must be >= 2")
    if n < k:
        raise DataError(f"cannot split {n} samples into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def outlier_count(n_test_inliers, pct):
    """Outliers needed so they make up ``pct`` percent of the evaluation set."""
    if not 0 <= pct < 100:
        raise ConfigError("outlier percentage must be in [0, 100)")
    return int(round(pct / (100.0 - pct) * n_test_inliers))


@dataclass
class FoldResult:
    fold: int
    outlier_pct: float
    auc: float
    f1: float
    f1_inlier: float
    precision: float
    recall: float
    tpr: float
    fpr: float
    tp: int
    fn: int
    fp: int
    tn: int
    n_pos: int
    n_neg: int
    n_outskirts: int = 0
    converged: bool = True


def evaluate_scores(scores, labels, fold=0, outlier_pct=0.0, **extra):
    labels = _binary(labels)
    pred = (np.asarray(scores) > 0).astype(int)
    s = summarize(Confusion.from_predictions(pred, labels))
    c = s.confusion
    return FoldResult(
        fold=fold, outlier_pct=float(outlier_pct), auc=roc_auc(scores, labels),
        f1=s.f1_weighted, f1_inlier=s.f1_inlier, precision=s.precision, recall=s.recall,
        tpr=s.tpr, fpr=s.fpr, tp=c.tp, fn=c.fn, fp=c.fp, tn=c.tn,
        n_pos=c.tp + c.fn, n_neg=c.fp + c.tn, **extra,
    )


AGG_FIELDS = ("auc", "f1", "f1_inlier", "precision", "recall", "tpr", "fpr")


@dataclass
class EvalReport:
    per_fold: list
    outlier_pct: float
    config_fingerprint: str = ""
    k: int = field(init=False)

    def __post_init__(self):
        self.k = len(self.per_fold)

    def mean(self, name):
        return float(np.mean([getattr(r, name) for r in self.per_fold]))

    @property
    def auc(self):
        return self.mean("auc")

    @property
    def f1(self):
        return self.mean("f1")

    @property
    def tpr(self):
        return self.mean("tpr")

    @property
    def fpr(self):
        return self.mean("fpr")

    @property
    def n_pos(self):
        return sum(r.n_pos for r in self.per_fold)

    @property
    def n_neg(self):
        return sum(r.n_neg for r in self.per_fold)

    def summary(self):
        out = {name: self.mean(name) for name in AGG_FIELDS}
        out.update(outlier_pct=self.outlier_pct, k=self.k, n_pos=self.n_pos, n_neg=self.n_neg,
                   config_fingerprint=self.config_fingerprint)
        return out


CSV_FIELDS = ["fold", "outlier_pct", "auc", "f1", "f1_inlier", "precision", "recall", "tpr",
              "fpr", "tp", "fn", "fp", "tn", "n_pos", "n_neg", "n_outskirts", "converged"]


def _fmt(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def reports_to_csv(reports):
    """One row per fold and one ``mean`` row per outlier percentage."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for rep in reports:
        for r in rep.per_fold:
            row = asdict(r)
            w.writerow([_fmt(row[f]) for f in CSV_FIELDS])
        agg = {f: "" for f in CSV_FIELDS}
        agg.update(fold="mean", outlier_pct=_fmt(float(rep.outlier_pct)))
        for name in AGG_FIELDS:
            agg[name] = _fmt(rep.mean(name))
        for name in ("tp", "fn", "fp", "tn", "n_pos", "n_neg", "n_outskirts"):
            agg[name] = str(sum(getattr(r, name) for r in rep.per_fold))
        agg["converged"] = _fmt(all(r.converged for r in rep.per_fold))
        w.writerow([agg[f] for f in CSV_FIELDS])
    return buf.getvalue()
