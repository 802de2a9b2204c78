"""Command-line interface.

    outskirt eval --dataset mnist:data/mnist --out-dir runs/m0
    outskirt fit --dataset blobs:seed=3 --fold 0 --out-dir runs/b3
    outskirt eval --model runs/b3/model.oskt --dataset blobs:seed=3

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, data_io, pipeline
from .boundary import meta_stats, select
from .config import ALPHA_GRID, BETA_GRID, load_config
from .errors import ConfigError, DataError, OutskirtError
from .metrics import EvalReport, reports_to_csv

log = logging.getLogger("outskirt")


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _common(p, dataset=True):
    p.add_argument("--config", help="flat key=value config file")
    if dataset:
        p.add_argument("--dataset", help="mnist:DIR | idx:IMAGES,LABELS | pgm:DIR | csv:PATH | "
                                         "blobs:n_in=..,n_out=..,d=..,separation=..,seed=..")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--selector", choices=("ellipsoid", "l2", "none"))
    p.add_argument("--outlier-pct", type=_floats, help="e.g. 10,20,30,40,50")
    p.add_argument("--folds", type=int)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="extra config override, repeatable")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="outskirt", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="train a model and save it")
    _common(p)
    p.add_argument("--fold", type=int, help="train on this fold's training split only")

    p = sub.add_parser("eval", help="k-fold evaluation, or evaluate a saved model")
    _common(p)
    p.add_argument("--model", help="saved model; evaluates its fold's held-out split")

    p = sub.add_parser("gridsearch", help="AUC/F1 surface over alpha and beta")
    _common(p)
    p.add_argument("--alphas", type=_floats, default=ALPHA_GRID)
    p.add_argument("--betas", type=_floats, default=BETA_GRID)

    p = sub.add_parser("ablate", help="ablation table")
    _common(p)
    p.add_argument("--rows", help="comma-separated subset of row names")

    p = sub.add_parser("synth-export", help="dump the catalog and synthetic outliers to CSV")
    _common(p)
    p.add_argument("--model")

    p = sub.add_parser("make-blobs", help="write a Gaussian blobs CSV")
    _common(p, dataset=False)
    p.add_argument("--n-in", type=int, default=500)
    p.add_argument("--n-out", type=int, default=500)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--separation", type=float, default=10.0)

    p = sub.add_parser("inspect-model", help="print a model file summary as JSON")
    p.add_argument("model")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _config(args):
    flat = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        flat[key.strip()] = value
    for attr, key in (("seed", "seed"), ("alpha", "alpha"), ("beta", "beta"),
                      ("selector", "selector"), ("folds", "cv.folds")):
        value = getattr(args, attr, None)
        if value is not None:
            flat[key] = str(value)
    if getattr(args, "outlier_pct", None):
        flat["cv.outlier_pct"] = ",".join(repr(v) for v in args.outlier_pct)
    return load_config(args.config, flat)


def _dataset(args):
    if not args.dataset:
        raise ConfigError("--dataset is required")
    return data_io.parse_dataset_spec(args.dataset)


def _out(args, name):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out / name


def _write_json(path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_rows(path, fields, rows):
    def fmt(v):
        return repr(v) if isinstance(v, float) else str(v)

    text = data_io.dumps_csv(fields, [[fmt(r[f]) for f in fields] for r in rows])
    path.write_text(text, encoding="utf-8")


def cmd_fit(args):
    cfg = _config(args)
    data = pipeline.prepare(_dataset(args), cfg)
    fit = pipeline.fit_fold(cfg, data, args.fold)
    path = data_io.save_model(fit.model, _out(args, "model.oskt"))
    _write_json(_out(args, "fit_manifest.json"), {
        "version": __version__, "config": cfg.to_flat(), "dataset": args.dataset,
        "dataset_fingerprint": data.fingerprint, "fold": fit.model.meta["fold"],
        "seed": fit.model.meta["seed"], "n_outskirts": fit.model.meta["n_outskirts"],
        "loss_history": fit.history,
    })
    print(f"model written to {path}")
    return 0


def _eval_saved(args):
    model = data_io.load_model(args.model)
    cfg = model.config
    data = pipeline.prepare(_dataset(args), cfg)
    if model.meta.get("dataset") and model.meta["dataset"] != data.fingerprint:
        log.warning("dataset differs from the one the model was trained on")
    fold = int(model.meta.get("fold", -1))
    pcts = tuple(args.outlier_pct or cfg.cv_outlier_pct)
    if fold >= 0:
        test = pipeline.cv_folds(cfg, data.n_inliers)[fold]
    else:
        test = np.arange(data.n_inliers)
    rows = pipeline.evaluate_model(model, cfg, data, test, fold, pcts)
    return [EvalReport([r], p, cfg.fingerprint()) for r, p in zip(rows, pcts)], None


def cmd_eval(args):
    if args.model:
        reports, manifest = _eval_saved(args)
    else:
        cfg = _config(args)
        reports, manifest = pipeline.run_experiment(cfg, _dataset(args), workers=args.workers)
    _out(args, "metrics.csv").write_text(reports_to_csv(reports), encoding="utf-8")
    if manifest is not None:
        _write_json(_out(args, "manifest.json"), manifest.to_dict())
    for rep in reports:
        print(f"outliers {rep.outlier_pct:g}%: AUC {rep.auc:.5f}  F1 {rep.f1:.5f}  "
              f"TPR {rep.tpr:.4f}  FPR {rep.fpr:.4f}")
    return 0


def cmd_gridsearch(args):
    cfg = _config(args)
    data = pipeline.prepare(_dataset(args), cfg)
    rows = pipeline.grid_search_alpha_beta(cfg, data, args.alphas, args.betas,
                                           workers=args.workers)
    _write_rows(_out(args, "grid.csv"), pipeline.GRID_FIELDS, rows)
    empty = sum(r["status"] != "ok" for r in rows)
    print(f"{len(rows)} cells written ({empty} empty)")
    return 0


def cmd_ablate(args):
    cfg = _config(args)
    data = pipeline.prepare(_dataset(args), cfg)
    rows = pipeline.default_ablation_rows(data.vector)
    if args.rows:
        wanted = [r.strip() for r in args.rows.split(",")]
        known = {name for name, _ in rows}
        bad = [w for w in wanted if w not in known]
        if bad:
            raise ConfigError(f"unknown ablation rows {bad}; known: {sorted(known)}")
        rows = [r for r in rows if r[0] in wanted]
    table = pipeline.ablate(cfg, data, rows, workers=args.workers)
    _write_rows(_out(args, "ablation.csv"), pipeline.ABLATION_FIELDS, table)
    for r in table:
        print(f"{r['name']:<22} AUC {r['auc']:.4f}  F1 {r['f1']:.4f}  {r['status']}")
    return 0


def cmd_synth_export(args):
    if args.model:
        model = data_io.load_model(args.model)
        cfg = model.config
        if model.catalog is None:
            raise DataError("model file holds no catalog")
        catalog, seed = model.catalog, model.meta["seed"]
    else:
        cfg = _config(args)
        data = pipeline.prepare(_dataset(args), cfg)
        fit = pipeline.fit_fold(cfg, data, None)
        catalog, seed = fit.model.catalog, fit.model.meta["seed"]
    d = catalog.dim
    flags = np.zeros(len(catalog), dtype=int)
    Y = np.empty((0, d))
    if cfg.synthesis != "none":
        stats = meta_stats(catalog)
        flags[select(catalog, stats, cfg.alpha, cfg.selector).indices] = 1
        _, Y = pipeline.synthesize_negatives(cfg, catalog, seed,
                                             cfg.synthesis_count or len(catalog))
    header = [f"mu_{j}" for j in range(d)]
    cols = [catalog.mu]
    if catalog.sigma is not None:
        header += [f"sigma_{j}" for j in range(d)]
        cols.append(catalog.sigma)
    header.append("outskirt")
    cols.append(flags[:, None])
    data_io.save_csv(_out(args, "catalog.csv"), header, np.hstack(cols))
    data_io.save_csv(_out(args, "synthetic.csv"), [f"y_{j}" for j in range(d)], Y)
    print(f"{len(catalog)} catalog rows ({flags.sum()} outskirts), {len(Y)} synthetic rows")
    return 0


def cmd_make_blobs(args):
    seed = 0 if args.seed is None else args.seed
    ds = data_io.blobs_dataset(args.n_in, args.n_out, args.dim, args.separation, seed)
    header = [f"x{j}" for j in range(args.dim)] + ["label"]
    data_io.save_csv(_out(args, "blobs.csv"), header,
                     np.hstack([ds.images, ds.labels[:, None].astype(float)]))
    print(f"wrote {len(ds)} rows (label 0 = inlier)")
    return 0


def cmd_inspect(args):
    model = data_io.load_model(args.model)
    h = model.hierarchy
    summary = {
        "format_version": ".".join(map(str, data_io.MODEL_VERSION)),
        "config": model.config.to_flat(),
        "meta": model.meta,
        "ae_mode": h.ae_mode,
        "feature_dims": list(h.feature_dims),
        "nets": [[list(s) for s in net.shapes] for net in h.nets()],
        "classifier": model.classifier.kind,
        "catalog": None if model.catalog is None else [len(model.catalog), model.catalog.dim],
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


COMMANDS = {
    "fit": cmd_fit, "eval": cmd_eval, "gridsearch": cmd_gridsearch, "ablate": cmd_ablate,
    "synth-export": cmd_synth_export, "make-blobs": cmd_make_blobs,
    "inspect-model": cmd_inspect,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except OutskirtError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code
