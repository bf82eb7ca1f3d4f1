"""Command-line interface.

Every command accepts ``--config FILE`` (JSON object of option defaults, keys
spelled like the long flags with dashes or underscores); explicit flags win.
Errors are printed to stderr as a JSON object. Exit codes: 0 success,
1 other failure, 2 configuration error, 3 data error, 4 every grid cell skipped.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from forumleak import ConfigError, DataError, ForumLeakError, __version__

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DATA, EXIT_SKIPPED = 0, 1, 2, 3, 4


def _emit(summary: dict, human: str) -> None:
    print(human)
    print(json.dumps(summary, sort_keys=True))


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _floats(text):
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    return [float(x) for x in str(text).split(",") if x.strip()]


def _load(args):
    from forumleak.model import load_dataset

    if not args.data:
        raise ConfigError("--data is required")
    return load_dataset(args.data, strict=args.strict)


def _window(args, dataset):
    """Leak window per ``--leak-weeks``/``--anchor``, or the whole dataset."""
    from forumleak.experiment import leak_window
    from forumleak.model import TimeWindow

    if getattr(args, "leak_weeks", None):
        return leak_window(dataset, args.leak_weeks, args.anchor)
    if dataset.span is None:
        raise DataError("dataset is empty")
    return TimeWindow.covering(dataset)


def cmd_ingest(args) -> int:
    from forumleak.model import dataset_summary, export_dataset

    ds, report = _load(args)
    summary = {"dataset": dataset_summary(ds), "load_report": json.loads(report.to_json())}
    if args.out:
        out = _out_dir(args.out)
        export_dataset(ds, out)
        (out / "load_report.json").write_text(report.to_json() + "\n")
    s = summary["dataset"]
    _emit(summary, f"loaded {s['users']} users, {s['threads']} threads, {s['posts']} posts, "
                   f"{s['messages']} messages; dropped {report.total_dropped} records")
    return EXIT_OK


def cmd_stats(args) -> int:
    from forumleak.graphs import build_private_graph, build_public_graph, overlap_stats
    from forumleak.model import dataset_summary

    ds, _ = _load(args)
    public = build_public_graph(ds, args.strategy)
    private = build_private_graph(ds)
    overlap = overlap_stats(public, private, ds)
    summary = {"dataset": dataset_summary(ds), "strategy": public.strategy, "overlap": overlap.to_dict()}
    if args.out:
        out = _out_dir(args.out)
        (out / "stats.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
        public.to_csv(out / "public_edges.csv")
        private.to_csv(out / "private_edges.csv")
    o = overlap.to_dict()
    lines = [f"strategy {public.strategy}: {o['public_edges']} public edges, {o['private_edges']} private edges"]
    for k, v in o.items():
        if k.endswith("fraction"):
            lines.append(f"  {k}: {100 * v:.1f}%")
    _emit(summary, "\n".join(lines))
    return EXIT_OK


def _hist_kw(args) -> dict:
    return {"avg_per_bin": args.avg_per_bin} if args.binning == "balanced" else {"bin_width": args.bin_width}


def cmd_fit_delay(args) -> int:
    from forumleak.delay import compute_delays, histogram, select_tau_max
    from forumleak.model import HOUR, slice_dataset

    ds, _ = _load(args)
    window = _window(args, ds)
    samples = compute_delays(slice_dataset(ds, window))
    if not samples:
        raise DataError("no post-to-message delays in the selected window")
    cands = [args.tau_max] if args.tau_max else _floats(args.tau_max_candidates)
    sel = select_tau_max(samples, args.binning, cands, tol=args.tol, seed=args.seed, **_hist_kw(args))
    model = sel.model
    out = _out_dir(args.out)
    (out / "delay_model.json").write_text(model.to_json() + "\n")
    histogram(samples, args.binning, sel.tau_max_hours * HOUR, **_hist_kw(args)).to_csv(out / "histogram.csv")
    with open(out / "delays.csv", "w") as fh:
        fh.write("post_id,recipient_id,tau\n")
        for s in samples:
            fh.write(f"{s.post_id},{s.recipient_id},{s.tau}\n")
    summary = {"model": model.to_dict(), "tau_max_stable": sel.stable,
               "max_changes": {repr(k): v for k, v in sel.max_changes.items()}, "n_delays": len(samples)}
    _emit(summary, f"fitted on {len(samples)} delays: a1={model.a1:.4g} b1={model.b1:.4g}/h "
                   f"a2={model.a2:.4g} b2={model.b2:.4g}/h c={model.c:.4g}; "
                   f"tau_max={model.tau_max_hours:g}h (stable={sel.stable}); R2={model.r_squared:.4f}")
    return EXIT_OK


def cmd_label(args) -> int:
    from forumleak.delay import DelayModel
    from forumleak.experiment import Theta, prepare_posts
    from forumleak.labeler import label_posts, likelihoods
    from forumleak.model import slice_dataset

    ds, _ = _load(args)
    if not args.model:
        raise ConfigError("--model is required")
    model = DelayModel.load(args.model)
    window = _window(args, ds)
    posts = prepare_posts(ds, window)
    if not posts:
        raise DataError("no posts survive the isolation and tail filters")
    sliced = slice_dataset(ds, window)
    theta = Theta.parse(args.theta).resolve(likelihoods(posts, sliced, model))
    labeling = label_posts(posts, sliced, model, theta)
    labeling.to_csv(args.out)
    summary = {"posts": len(labeling.posts), "theta": theta, "positive_fraction": labeling.positive_fraction}
    _emit(summary, f"labelled {len(labeling.posts)} posts at theta={theta:.6g}: "
                   f"{100 * labeling.positive_fraction:.1f}% positive")
    return EXIT_OK


def cmd_featurize(args) -> int:
    from forumleak.experiment import prepare_posts
    from forumleak.features import Vocabulary, build_vocabulary, feature_matrix, write_sparse
    from forumleak.graphs import build_public_graph, centrality_table
    from forumleak.model import slice_dataset

    ds, _ = _load(args)
    window = _window(args, ds)
    public = slice_dataset(ds, window).public_view()
    posts = prepare_posts(ds, window)
    if not posts:
        raise DataError("no posts survive the isolation and tail filters")
    if args.vocabulary:
        vocab = Vocabulary.from_json(Path(args.vocabulary).read_text())
    else:
        vocab = build_vocabulary(posts, public, args.min_tf, args.stopwords, args.stemmer)
    table = centrality_table(build_public_graph(public, args.strategy), seed=args.seed)
    _, vectors = feature_matrix(posts, public, vocab, table)
    out = _out_dir(args.out)
    write_sparse(out / "features.txt", vectors, vocab)
    (out / "vocabulary.json").write_text(vocab.to_json() + "\n")
    summary = {"posts": len(vectors), "n_features": vocab.n_features, "terms": vocab.sizes}
    _emit(summary, f"featurized {len(vectors)} posts into {vocab.n_features} features")
    return EXIT_OK


def _aligned(features_path, labels_path):
    from forumleak.features import read_sparse
    from forumleak.labeler import read_labels

    ids, X = read_sparse(features_path)
    labels = read_labels(labels_path)
    missing = [i for i in ids if i not in labels]
    if missing:
        raise DataError(f"{len(missing)} featurized posts have no label, e.g. {missing[0]!r}")
    return ids, X, np.array([labels[i] for i in ids])


def _columns(args, n_features):
    from forumleak.features import Vocabulary, feature_set_columns

    if args.feature_set == "all" and not args.vocabulary:
        return np.arange(n_features)
    if not args.vocabulary:
        raise ConfigError("--vocabulary is needed to select the nlp or context feature set")
    return feature_set_columns(Vocabulary.from_json(Path(args.vocabulary).read_text()), args.feature_set)


def cmd_train(args) -> int:
    from forumleak.forest import ForestParams, train

    ids, X, y = _aligned(args.features, args.labels)
    cols = _columns(args, X.shape[1])
    params = ForestParams(args.n_trees, args.max_depth, args.min_leaf, args.features_per_split,
                          args.seed, args.jobs)
    forest = train(X[:, cols], y, params)
    payload = json.loads(forest.to_json())
    payload["columns"] = cols.tolist()
    payload["feature_set"] = args.feature_set
    Path(args.out).write_text(json.dumps(payload) + "\n")
    summary = {"trees": len(forest.trees), "train_posts": len(ids), "features": len(cols),
               "positive_fraction": forest.positive_fraction}
    _emit(summary, f"trained {len(forest.trees)} trees on {len(ids)} posts x {len(cols)} features")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from forumleak.forest import TrainedForest, accuracy, info_gain, predict_scores, roc

    text = Path(args.model).read_text()
    forest = TrainedForest.from_json(text)
    cols = np.asarray(json.loads(text).get("columns", []), dtype=np.int64)
    ids, X, y = _aligned(args.features, args.labels)
    if cols.size == 0:
        cols = np.arange(X.shape[1])
    scores = predict_scores(forest, X[:, cols])
    curve = roc(scores, y)
    out = _out_dir(args.out)
    curve.to_csv(out / "roc.csv")
    with open(out / "scores.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["post_id", "score", "label"])
        w.writerows([i, repr(float(s)), int(lab)] for i, s, lab in zip(ids, scores, y))
    summary = {
        "posts": len(ids), "auc": curve.auc, "accuracy": accuracy(scores, y, args.threshold),
        "threshold": args.threshold,
        "info_gain": [[int(cols[j]), g] for j, g in info_gain(X[:, cols], y)[: args.top_k]],
    }
    (out / "metrics.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    _emit(summary, f"AUC {curve.auc:.4f}, accuracy {summary['accuracy']:.4f} on {len(ids)} posts")
    return EXIT_OK


def _experiment_config(args):
    from forumleak.experiment import ExperimentConfig

    raw = {k.replace("-", "_"): v for k, v in args.config_dict.items()}
    if "data" in raw:
        raw.setdefault("dataset", raw.pop("data"))
    if "out" in raw:
        raw.setdefault("output", raw.pop("out"))
    cross = raw.pop("cross", None)
    if args.cross is None:
        args.cross = cross
    cfg = ExperimentConfig.from_dict(raw)
    if args.data:
        cfg.dataset = args.data
    if args.workers:
        cfg.workers = args.workers
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out:
        cfg.output = args.out
    cfg.validate()
    return cfg


def cmd_experiment(args) -> int:
    from forumleak.experiment import load_for_experiment, run_cross_forum, run_grid
    from forumleak.model import load_dataset

    cfg = _experiment_config(args)
    dataset = load_for_experiment(cfg)
    if args.cross:
        other, _ = load_dataset(args.cross, strict=False)
        reports = [run_cross_forum(dataset, other, cfg, c) for c in cfg.cells()]
        if cfg.output:
            out = _out_dir(cfg.output)
            (out / "cross_report.json").write_text(json.dumps(reports, indent=1, sort_keys=True) + "\n")
        lines = [f"{r['cell']}: {r['status']} auc={r.get('auc')} intra={r.get('intra_forum_auc')} {r['reason']}"
                 for r in reports]
        _emit({"cells": [{k: r.get(k) for k in ("cell", "status", "auc", "intra_forum_auc", "reason")}
                         for r in reports]}, "\n".join(lines))
        skipped = all(r["status"] == "skipped" for r in reports)
        return EXIT_SKIPPED if skipped else EXIT_OK
    result = run_grid(dataset, cfg)
    sys.stdout.write(result.summary)
    counts = {}
    for r in result.reports:
        counts[r["status"]] = counts.get(r["status"], 0) + 1
    print(json.dumps({"cells": len(result.reports), "status_counts": counts, "output": cfg.output},
                     sort_keys=True))
    return EXIT_SKIPPED if result.all_skipped else EXIT_OK


def cmd_synth(args) -> int:
    from dataclasses import replace

    from forumleak.model import dataset_summary
    from forumleak.synth import SynthConfig, null_config, write_synthetic

    raw = {k.replace("-", "_"): v for k, v in args.config_dict.items()}
    raw.pop("out", None)
    args.null = args.null or bool(raw.pop("null", False))
    cfg = SynthConfig.from_dict(raw)
    overrides = {k: getattr(args, k) for k in ("seed", "n_users", "span_weeks") if getattr(args, k) is not None}
    cfg = replace(cfg, **overrides)
    if args.null:
        cfg = null_config(cfg)
    ds, truth = write_synthetic(cfg, args.out)
    s = dataset_summary(ds)
    summary = {"dataset": s, "triggered_posts": len(truth.triggered_posts), "config": cfg.to_dict()}
    _emit(summary, f"wrote {s['users']} users, {s['threads']} threads, {s['messages']} messages "
                   f"({len(truth.triggered_posts)} triggering posts) to {args.out}")
    return EXIT_OK


def cmd_report(args) -> int:
    run = Path(args.run)
    path = run / "grid_report.json"
    if not path.exists():
        raise DataError(f"{path} not found")
    data = json.loads(path.read_text())
    lines = [f"config {data['config_hash']} (version {data['version']})",
             "| cell | status | accuracy | AUC | positives | top features |",
             "|---|---|---|---|---|---|"]
    for r in data["cells"]:
        top = ", ".join(n for n, _ in r.get("info_gain", [])[:5])
        acc = f"{r['accuracy']:.4f}" if r.get("accuracy") is not None else ""
        auc = f"{r['auc']:.4f}" if r.get("auc") is not None else ""
        pos = f"{r['positive_fraction']:.3f}" if r.get("positive_fraction") is not None else ""
        lines.append(f"| {r['cell']} | {r['status']} {r.get('reason', '')} | {acc} | {auc} | {pos} | {top} |")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def _add_data(p):
    p.add_argument("--data", help="dataset directory with users/threads/posts/pms JSONL files")
    p.add_argument("--strict", action="store_true", help="fail on referential violations")


def _add_window(p):
    p.add_argument("--leak-weeks", type=float, help="restrict to a leak window of this length")
    p.add_argument("--anchor", default="midpoint", help="leak end: 'midpoint' or a unix timestamp")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forumleak", description="Forum leak analysis toolkit")
    parser.add_argument("--version", action="version", version=f"forumleak {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    parser.subcommands = {}

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        parser.subcommands[name] = p
        p.add_argument("--config", help="JSON file of option defaults")
        p.set_defaults(func=func)
        return p

    p = command("ingest", cmd_ingest, "load and validate a dataset")
    _add_data(p)
    p.add_argument("--out", help="write the cleaned dataset and load report here")

    p = command("stats", cmd_stats, "public/private graph overlap statistics")
    _add_data(p)
    p.add_argument("--strategy", default="same-thread")
    p.add_argument("--out")

    p = command("fit-delay", cmd_fit_delay, "fit the post-to-message delay model")
    _add_data(p)
    _add_window(p)
    p.add_argument("--binning", choices=("naive", "balanced"), default="balanced")
    p.add_argument("--avg-per-bin", type=float, default=4.0)
    p.add_argument("--bin-width", type=float, default=900.0, help="seconds")
    p.add_argument("--tau-max-candidates", default="5,10,15,20,30,40,60,80", help="hours, comma separated")
    p.add_argument("--tau-max", type=float, help="fixed tau_max in hours")
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=False, default="delay-fit")

    p = command("label", cmd_label, "label thread starts by aggregated likelihood")
    _add_data(p)
    _add_window(p)
    p.add_argument("--model", help="delay_model.json")
    p.add_argument("--theta", default="q0.5", help="absolute value or q<quantile>")
    p.add_argument("--out", default="labels.csv")

    p = command("featurize", cmd_featurize, "extract text and context features")
    _add_data(p)
    _add_window(p)
    p.add_argument("--vocabulary", help="reuse an existing vocabulary.json")
    p.add_argument("--min-tf", type=int, default=3)
    p.add_argument("--stopwords", default="english+german")
    p.add_argument("--stemmer", default="english")
    p.add_argument("--strategy", default="thread-owner")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="features")

    p = command("train", cmd_train, "train the random forest")
    p.add_argument("--features")
    p.add_argument("--labels")
    p.add_argument("--vocabulary")
    p.add_argument("--feature-set", choices=("nlp", "context", "all"), default="all")
    p.add_argument("--n-trees", type=int, default=100)
    p.add_argument("--max-depth", type=int, default=25)
    p.add_argument("--min-leaf", type=int, default=5)
    p.add_argument("--features-per-split", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="model.json")

    p = command("evaluate", cmd_evaluate, "score posts and compute ROC/AUC")
    p.add_argument("--model")
    p.add_argument("--features")
    p.add_argument("--labels")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--top-k", type=int, default=20)
    p.add_argument("--out", default="evaluation")

    p = command("experiment", cmd_experiment, "run the leak/target experiment grid")
    p.add_argument("--data")
    p.add_argument("--cross", help="second dataset: train on --data, test on this one")
    p.add_argument("--workers", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = command("synth", cmd_synth, "generate a synthetic forum")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-users", type=int)
    p.add_argument("--span-weeks", type=float)
    p.add_argument("--null", action="store_true", help="make triggers independent of text and tags")
    p.add_argument("--out", default="synthetic")

    p = command("report", cmd_report, "render a grid run as a table")
    p.add_argument("--run", help="experiment output directory")
    p.add_argument("--out")
    return parser


def _read_config(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return data


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    config = _read_config(args.config) if args.config else {}
    args.config_dict = config
    if args.command in ("experiment", "synth"):
        return args  # the whole file feeds ExperimentConfig / SynthConfig
    sub = parser.subcommands[args.command]
    dests = {a.dest for a in sub._actions}
    options = {k.replace("-", "_"): v for k, v in config.items()}
    unknown = sorted(set(options) - dests)
    if unknown:
        raise ConfigError(f"unknown options for {args.command}: {unknown}")
    sub.set_defaults(**options)
    args = parser.parse_args(argv)
    args.config_dict = config
    return args


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        return args.func(args)
    except ForumLeakError as e:
        code = EXIT_CONFIG if isinstance(e, ConfigError) else EXIT_DATA if isinstance(e, DataError) else EXIT_FAIL
        _error(e, code)
        return code
    except OSError as e:
        _error(e, EXIT_DATA)
        return EXIT_DATA
    except (ValueError, KeyError) as e:
        _error(e, EXIT_FAIL)
        return EXIT_FAIL


def _error(exc, code: int) -> None:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}) + "\n")


if __name__ == "__main__":
    sys.exit(main())
