"""Orchestration: fit -> catalog -> select -> synthesize -> classify -> evaluate.

Every unit of work (a fold, a grid cell, an ablation row) is a pure
function of the config, a derived seed and a slice of precomputed
features, so running them on a thread pool only changes wall-clock time.
Results are always merged in canonical order.
"""

from __future__ import annotations

import logging
import math
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__, seeds
from .boundary import SynthesisConfig, jitter_synthesize, meta_stats, select, synthesize
from .classify import mlp_fit, nb_fit, one_class_fit, svm_fit
from .config import ALPHA_GRID, BETA_GRID
from .errors import ConfigError, DataError, EmptyOutskirtError
from .features import extract
from .hierarchy import fit_hierarchy
from .metrics import EvalReport, evaluate_scores, kfold_split, outlier_count
from .model import PipelineModel
from .nnet import TrainConfig

logger = logging.getLogger(__name__)


def fold_seed(master, fold):
    """Seed for everything trained inside one fold (``fold=-1``: all inliers)."""
    return seeds.derive(master, "fold", fold + 1)


def _pool_map(fn, items, workers):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


# -- data ---------------------------------------------------------------------------


@dataclass
class PreparedData:
    """Features of the inliers and of the true-outlier pool.

    ``inlier_index`` / ``outlier_index`` are positions in the source
    dataset, kept for the zero-shot audit.
    """

    inliers: list
    outliers: list
    inlier_index: np.ndarray
    outlier_index: np.ndarray
    fingerprint: str = ""
    source: str = ""
    features: tuple = ()
    vector: bool = False

    @property
    def n_inliers(self):
        return len(self.inlier_index)

    @property
    def n_outliers(self):
        return len(self.outlier_index)


def split_classes(dataset, cfg):
    labels = np.asarray(dataset.labels)
    inl = np.flatnonzero(labels == cfg.data_inlier_class)
    out = np.flatnonzero(labels != cfg.data_inlier_class)
    if cfg.data_max_inliers and len(inl) > cfg.data_max_inliers:
        inl = inl[: cfg.data_max_inliers]
    return inl, out


def prepare(dataset, cfg):
    inl, out = split_classes(dataset, cfg)
    if len(inl) < cfg.cv_folds:
        raise DataError(f"only {len(inl)} samples of inlier class {cfg.data_inlier_class}")
    features = list(cfg.features)
    if dataset.is_vector:
        features = ["raw"]
    hog_cfg, lbp_cfg = cfg.hog_config(), cfg.lbp_config()
    fi = extract(dataset.take(inl).images, features, hog_cfg, lbp_cfg)
    if len(out):
        fo = extract(dataset.take(out).images, features, hog_cfg, lbp_cfg)
    else:
        fo = [np.empty((0, f.shape[1])) for f in fi]
    return PreparedData(fi, fo, inl, out, dataset.fingerprint(), dataset.source,
                        tuple(features), dataset.is_vector)


def audit_zero_shot(train_positions, data):
    """Training rows must come from the inlier class only."""
    used = data.inlier_index[train_positions]
    leaked = np.intersect1d(used, data.outlier_index)
    if leaked.size:
        raise AssertionError(f"true outliers reached training: dataset rows {leaked[:5]}")


# -- fitting --------------------------------------------------------------------------


@dataclass
class FitResult:
    model: PipelineModel
    outskirts: object = None
    synthetic: np.ndarray | None = None
    history: list = field(default_factory=list)


def _classifier_inputs(cfg, catalog, seed):
    if cfg.classifier_use_sample and catalog.sigma is not None:
        rng = np.random.default_rng(seeds.derive(seed, "vae-noise", 1))
        return catalog.mu + catalog.sigma * rng.standard_normal(catalog.mu.shape)
    return catalog.mu


def synthesize_negatives(cfg, catalog, seed, count, alpha=None, beta=None):
    """Outskirt selection plus synthesis; returns ``(outskirts, Y)``."""
    alpha = cfg.alpha if alpha is None else alpha
    beta = cfg.beta if beta is None else beta
    stats = meta_stats(catalog)
    outskirts = select(catalog, stats, alpha, cfg.selector)
    if cfg.synthesis == "jitter":
        Y = jitter_synthesize(outskirts, count, cfg.jitter_sigma, seed)
    else:
        noise = "half_normal" if cfg.synthesis == "stochastic" else "deterministic_one"
        Y = synthesize(outskirts, SynthesisConfig(beta, noise, count, seed))
    return outskirts, Y


def train_classifier(cfg, pos, neg, seed):
    if cfg.classifier == "ocsvm":
        return one_class_fit(pos, cfg.svm_kernel, cfg.svm_gamma, cfg.ocsvm_nu, cfg.svm_degree,
                             cfg.svm_coef0, cfg.svm_tol, cfg.svm_max_iter, cfg.svm_cache_rows)
    if cfg.classifier == "svm":
        return svm_fit(pos, neg, cfg.svm_kernel, cfg.svm_gamma, cfg.svm_C, cfg.svm_degree,
                       cfg.svm_coef0, cfg.svm_tol, cfg.svm_max_iter, cfg.svm_cache_rows)
    if cfg.classifier == "nb":
        return nb_fit(pos, neg)
    tc = TrainConfig(cfg.mlp_lr, 64, cfg.mlp_epochs, "adam", seeds.derive(seed, "mlp"))
    return mlp_fit(pos, neg, cfg.mlp_hidden, tc)


def fit_stack(cfg, features, seed):
    return fit_hierarchy(features, cfg.hierarchy_config(), seed=seed)


def fit_head(cfg, hierarchy, catalog, seed, alpha=None, beta=None, meta=None, history=()):
    """Everything after the hierarchy: synthesis and the classifier."""
    pos = _classifier_inputs(cfg, catalog, seed)
    outskirts = Y = None
    if cfg.synthesis != "none":
        count = cfg.synthesis_count or len(pos)
        outskirts, Y = synthesize_negatives(cfg, catalog, seed, count, alpha, beta)
    clf = train_classifier(cfg, pos, Y, seed)
    meta = dict(meta or {})
    meta.update(seed=int(seed), n_train=len(pos),
                n_outskirts=0 if outskirts is None else len(outskirts),
                sample_seed=int(seeds.derive(seed, "vae-noise", 2)))
    model = PipelineModel(cfg, hierarchy, clf, catalog, meta)
    return FitResult(model, outskirts, Y, list(history))


def fit_pipeline(cfg, features, seed=None, meta=None):
    """Train on a list of inlier feature matrices."""
    seed = fold_seed(cfg.seed, -1) if seed is None else seed
    h, catalog, history = fit_stack(cfg, features, seed)
    return fit_head(cfg, h, catalog, seed, meta=meta, history=history)


def fit_fold(cfg, data, fold=None):
    """Model for one CV fold (or for all inliers when ``fold`` is None)."""
    if fold is None:
        train = np.arange(data.n_inliers)
        seed = fold_seed(cfg.seed, -1)
    else:
        folds = cv_folds(cfg, data.n_inliers)
        if not 0 <= fold < len(folds):
            raise ConfigError(f"fold must be within 0..{len(folds) - 1}")
        train = np.setdiff1d(np.arange(data.n_inliers), folds[fold])
        seed = fold_seed(cfg.seed, fold)
    audit_zero_shot(train, data)
    feats = [f[train] for f in data.inliers]
    meta = {"fold": -1 if fold is None else int(fold), "features": list(data.features),
            "dataset": data.fingerprint}
    return fit_pipeline(cfg, feats, seed, meta)


def score(model, features):
    return model.score_features(features)


# -- evaluation -------------------------------------------------------------------------


def cv_folds(cfg, n):
    return kfold_split(n, cfg.cv_folds, seeds.derive(cfg.seed, "folds"))


def sample_outliers(cfg, data, fold, pct, n_test):
    need = outlier_count(n_test, pct)
    if need > data.n_outliers:
        raise DataError(
            f"{pct}% outliers over {n_test} test inliers needs {need} outliers; "
            f"the pool holds {data.n_outliers}"
        )
    rng = np.random.default_rng(seeds.derive(cfg.seed, "outliers", fold + 1, round(pct * 1000)))
    return np.sort(rng.choice(data.n_outliers, size=need, replace=False))


def evaluate_model(model, cfg, data, test, fold, pcts):
    """One FoldResult per outlier percentage."""
    test_feats = [f[test] for f in data.inliers]
    s_in = model.score_features(test_feats)
    rows = []
    for pct in pcts:
        pick = sample_outliers(cfg, data, fold, pct, len(test))
        s_out = model.score_features([f[pick] for f in data.outliers])
        scores = np.concatenate([s_in, s_out])
        labels = np.concatenate([np.ones(len(s_in), int), np.zeros(len(s_out), int)])
        rows.append(evaluate_scores(
            scores, labels, fold=fold, outlier_pct=pct,
            n_outskirts=int(model.meta.get("n_outskirts", 0)),
            converged=bool(getattr(model.classifier, "converged", True)),
        ))
    return rows


def _cv_fold(args):
    cfg, data, fold, folds, pcts = args
    test = folds[fold]
    fit = fit_fold(cfg, data, fold)
    return evaluate_model(fit.model, cfg, data, test, fold, pcts)


def run_cv(cfg, data, pcts=None, workers=1):
    """k-fold CV over the inliers; returns one EvalReport per outlier percentage."""
    pcts = tuple(cfg.cv_outlier_pct if pcts is None else pcts)
    folds = cv_folds(cfg, data.n_inliers)
    per_fold = _pool_map(_cv_fold, [(cfg, data, k, folds, pcts) for k in range(len(folds))],
                         workers)
    fp = cfg.fingerprint()
    return [EvalReport([rows[j] for rows in per_fold], pct, fp) for j, pct in enumerate(pcts)]


@dataclass
class RunManifest:
    config: dict
    seeds: dict
    dataset: dict
    wall_clock_s: float
    version: str
    metrics: list
    platform: str = field(default_factory=platform.platform)

    def to_dict(self):
        return {
            "version": self.version, "config": self.config, "seeds": self.seeds,
            "dataset": self.dataset, "wall_clock_s": self.wall_clock_s,
            "metrics": self.metrics, "platform": self.platform,
        }


def _manifest(cfg, data, t0, metrics):
    n_folds = cfg.cv_folds
    seed_table = {
        "master": cfg.seed,
        "folds": seeds.derive(cfg.seed, "folds"),
        "per_fold": [fold_seed(cfg.seed, k) for k in range(n_folds)],
        "all_inliers": fold_seed(cfg.seed, -1),
    }
    ds = {"source": data.source, "fingerprint": data.fingerprint,
          "n_inliers": data.n_inliers, "n_outliers": data.n_outliers,
          "inlier_class": cfg.data_inlier_class}
    return RunManifest(cfg.to_flat(), seed_table, ds, round(time.time() - t0, 3),
                       __version__, metrics)


def run_experiment(cfg, dataset, workers=1):
    """Full CV run; returns ``(reports, manifest)``."""
    t0 = time.time()
    data = dataset if isinstance(dataset, PreparedData) else prepare(dataset, cfg)
    reports = run_cv(cfg, data, workers=workers)
    return reports, _manifest(cfg, data, t0, [r.summary() for r in reports])


# -- alpha/beta grid ------------------------------------------------------------------------

GRID_FIELDS = ["alpha", "beta", "auc", "f1", "tpr", "fpr", "n_outskirts", "status", "reason"]


def _grid_cell(args):
    cfg, data, fold, test, stack, alpha, beta, pct = args
    h, catalog, seed = stack
    try:
        fit = fit_head(cfg, h, catalog, seed, alpha, beta, meta={"fold": fold})
    except EmptyOutskirtError as exc:
        return {"empty": True, "reason": str(exc)}
    row = evaluate_model(fit.model, cfg, data, test, fold, (pct,))[0]
    return {"empty": False, "row": row}


def _fold_stack(args):
    cfg, data, fold, folds = args
    train = np.setdiff1d(np.arange(data.n_inliers), folds[fold])
    audit_zero_shot(train, data)
    seed = fold_seed(cfg.seed, fold)
    h, catalog, _ = fit_stack(cfg, [f[train] for f in data.inliers], seed)
    return h, catalog, seed


def grid_search_alpha_beta(cfg, data, alphas=ALPHA_GRID, betas=BETA_GRID, pct=None, workers=1):
    """AUC/F1 surface over (alpha, beta).

    One hierarchy is trained per fold and shared by every cell.  A cell
    whose outskirt set is empty in any fold gets NaN metrics and
    ``status=empty``.
    """
    if cfg.fusion != "vae":
        raise ConfigError("grid search needs fusion=vae")
    pct = cfg.cv_outlier_pct[0] if pct is None else pct
    folds = cv_folds(cfg, data.n_inliers)
    stacks = _pool_map(_fold_stack, [(cfg, data, k, folds) for k in range(len(folds))], workers)
    cells = [(a, b) for a in alphas for b in betas]
    tasks = [(cfg, data, k, folds[k], stacks[k], a, b, pct)
             for a, b in cells for k in range(len(folds))]
    results = _pool_map(_grid_cell, tasks, workers)
    rows = []
    for c, (a, b) in enumerate(cells):
        res = results[c * len(folds) : (c + 1) * len(folds)]
        empty = [k for k, r in enumerate(res) if r["empty"]]
        if empty:
            reason = f"empty outskirt set in fold(s) {','.join(map(str, empty))}: " + res[empty[0]]["reason"]
            rows.append(dict(alpha=a, beta=b, auc=math.nan, f1=math.nan, tpr=math.nan,
                             fpr=math.nan, n_outskirts=0.0, status="empty", reason=reason))
            continue
        fr = [r["row"] for r in res]
        rows.append(dict(
            alpha=a, beta=b,
            auc=float(np.mean([r.auc for r in fr])), f1=float(np.mean([r.f1 for r in fr])),
            tpr=float(np.mean([r.tpr for r in fr])), fpr=float(np.mean([r.fpr for r in fr])),
            n_outskirts=float(np.mean([r.n_outskirts for r in fr])), status="ok", reason="",
        ))
    return rows


# -- ablation -----------------------------------------------------------------------------------

ABLATION_FIELDS = ["name", "features", "ae_mode", "fusion", "selector", "synthesis",
                   "classifier", "auc", "f1", "tpr", "fpr", "status", "reason"]

_FEATURE_CODE = {"hog": "H", "lbp": "L", "raw": "R"}


def _row(name, **kv):
    return name, {k.replace("__", "."): v for k, v in kv.items()}


def default_ablation_rows(vector=False):
    """Named override sets mirroring the usual ablation table layout.

    Image data additionally varies the descriptor combination.
    """
    feature_sets = [("hog", "lbp", "raw")]
    if not vector:
        feature_sets += [("hog", "lbp"), ("hog", "raw"), ("lbp", "raw")]
    rows = []
    for feats in feature_sets:
        tag = "".join(_FEATURE_CODE[f] for f in feats) if not vector else "R"
        fset = ",".join(feats) if not vector else "raw"
        for mode, m in (("individual", "I"), ("concatenated", "C"), ("none", "WO")):
            for sel, s in (("ellipsoid", "e"), ("l2", "l")):
                rows.append(_row(f"{tag}-{m}-W-{s}", features=fset, ae__mode=mode, fusion="vae",
                                 selector=sel, synthesis="stochastic", classifier="svm"))
            if mode != "none":
                rows.append(_row(f"{tag}-{m}-WO--", features=fset, ae__mode=mode, fusion="none",
                                 selector="none", synthesis="none", classifier="ocsvm"))
        if vector:
            break
    fset = "hog,lbp,raw" if not vector else "raw"
    tag = "HLR" if not vector else "R"
    for sel, s in (("ellipsoid", "e^"), ("l2", "l^")):
        rows.append(_row(f"{tag}-I-W-{s}", features=fset, ae__mode="individual", fusion="vae",
                         selector=sel, synthesis="deterministic", classifier="svm"))
    rows.append(_row(f"{tag}-I-W--", features=fset, ae__mode="individual", fusion="vae",
                     selector="none", synthesis="none", classifier="ocsvm"))
    for sel, s in (("ellipsoid", "e"), ("l2", "l")):
        rows.append(_row(f"{tag}-I-AE-{s}-jitter", features=fset, ae__mode="individual",
                         fusion="ae", selector=sel, synthesis="jitter", classifier="svm"))
    rows.append(_row(f"{tag}-I-AE--", features=fset, ae__mode="individual", fusion="ae",
                     selector="none", synthesis="none", classifier="ocsvm"))
    return rows


def _ablation_task(args):
    base, data, name, overrides, pct = args
    try:
        cfg = base.with_overrides(overrides)
    except ConfigError as exc:
        return {"name": name, "status": "invalid", "reason": str(exc)}
    sub = data
    if not data.vector and cfg.features != data.features:
        sub = _select_features(data, cfg.features)
    try:
        rep = run_cv(cfg, sub, pcts=(pct,), workers=1)[0]
    except EmptyOutskirtError as exc:
        return {"name": name, "cfg": cfg, "status": "empty", "reason": str(exc)}
    return {"name": name, "cfg": cfg, "status": "ok", "reason": "", "report": rep}


def _select_features(data, want):
    have = list(data.features)
    missing = [f for f in want if f not in have]
    if missing:
        raise ConfigError(f"features {missing} were not extracted")
    pick = [have.index(f) for f in want]
    return PreparedData([data.inliers[i] for i in pick], [data.outliers[i] for i in pick],
                        data.inlier_index, data.outlier_index, data.fingerprint, data.source,
                        tuple(want), data.vector)


def ablate(cfg, data, rows=None, pct=None, workers=1):
    """Run every ablation row with k-fold CV; returns dict rows in input order.

    ``data`` must be prepared with ``cfg.features`` covering every feature
    a row asks for.
    """
    rows = default_ablation_rows(data.vector) if rows is None else rows
    pct = cfg.cv_outlier_pct[0] if pct is None else pct
    results = _pool_map(_ablation_task, [(cfg, data, n, o, pct) for n, o in rows], workers)
    out = []
    for (name, overrides), res in zip(rows, results):
        c = res.get("cfg")
        row = dict(name=name, features=overrides.get("features", ",".join(data.features)),
                   ae_mode=c.ae_mode if c else overrides.get("ae.mode", ""),
                   fusion=c.fusion if c else overrides.get("fusion", ""),
                   selector=c.selector if c else overrides.get("selector", ""),
                   synthesis=c.synthesis if c else overrides.get("synthesis", ""),
                   classifier=c.classifier if c else overrides.get("classifier", ""),
                   status=res["status"], reason=res["reason"])
        rep = res.get("report")
        for m in ("auc", "f1", "tpr", "fpr"):
            row[m] = rep.mean(m) if rep is not None else math.nan
        out.append(row)
    return out
