"""Leak/target experiment protocol, parameter grids and cross-forum runs."""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Union

from forumleak import ConfigError, DataError, FitError, __version__
from forumleak.delay import DelayModel, compute_delays, select_tau_max
from forumleak.features import build_vocabulary, feature_matrix, feature_set_columns
from forumleak.forest import ForestParams, accuracy, info_gain, predict_scores, roc, train
from forumleak.graphs import build_public_graph, centrality_table
from forumleak.labeler import filter_isolated_posts, filter_leak_tail, label_posts, likelihoods, quantile_theta
from forumleak.model import WEEK, ForumDataset, TimeWindow, load_dataset, slice_dataset

SUMMARY_COLUMNS = ("d_l", "delta", "theta", "feature_set", "status", "accuracy", "auc",
                   "positive_fraction", "reason")
MIN_POSITIVE_FRACTION = 0.1


@dataclass(frozen=True)
class Theta:
    """Label threshold: an absolute likelihood or a quantile of training weights."""

    value: float
    quantile: bool = False

    @classmethod
    def parse(cls, raw) -> "Theta":
        if isinstance(raw, Theta):
            return raw
        if isinstance(raw, bool):
            raise ConfigError(f"bad theta {raw!r}")
        if isinstance(raw, (int, float)):
            if raw < 0:
                raise ConfigError("absolute theta must be non-negative")
            return cls(float(raw))
        if isinstance(raw, dict) and len(raw) == 1:
            (kind, v), = raw.items()
            if kind in ("quantile", "absolute"):
                return cls.parse(f"q{v}" if kind == "quantile" else float(v))
        if isinstance(raw, str):
            s = raw.strip()
            try:
                if s.startswith("q"):
                    q = float(s[1:])
                    if not 0 <= q <= 1:
                        raise ConfigError("theta quantile must lie in [0, 1]")
                    return cls(q, True)
                return cls.parse(float(s))
            except ValueError:
                pass
        raise ConfigError(f"bad theta {raw!r}; use a number or 'q<quantile>'")

    @property
    def label(self) -> str:
        return f"q{self.value!r}" if self.quantile else repr(self.value)

    def resolve(self, training_weights) -> float:
        return quantile_theta(training_weights, self.value) if self.quantile else self.value


@dataclass(frozen=True)
class Cell:
    d_l_weeks: float
    delta_weeks: float
    theta: Theta
    feature_set: str

    @property
    def key(self) -> str:
        return f"dl{self.d_l_weeks:g}_delta{self.delta_weeks:g}_theta{self.theta.label}_{self.feature_set}"


@dataclass
class ExperimentConfig:
    dataset: Optional[str] = None
    d_l_weeks: list = field(default_factory=lambda: [1, 3, 5, 7])
    d_t_weeks: float = 6
    delta_weeks: list = field(default_factory=lambda: [0, 3, 5])
    thetas: list = field(default_factory=lambda: ["q0.5"])
    feature_sets: list = field(default_factory=lambda: ["all"])
    forest: dict = field(default_factory=dict)
    seed: int = 0
    anchor: Union[str, int] = "midpoint"  # or an explicit leak-end timestamp
    strategy: str = "thread-owner"
    binning: str = "balanced"
    avg_per_bin: float = 4.0
    bin_width: float = 900.0
    tau_max_candidates: list = field(default_factory=lambda: [5, 10, 15, 20, 30, 40, 60, 80])
    tau_max_hours: Optional[float] = None  # fixes tau_max and skips the selection
    tau_tol: float = 1e-3
    top_k: int = 20
    workers: int = 1
    output: Optional[str] = None

    def __post_init__(self):
        for name in ("d_l_weeks", "delta_weeks", "thetas", "feature_sets", "tau_max_candidates"):
            v = getattr(self, name)
            if not isinstance(v, (list, tuple)):
                setattr(self, name, [v])

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown experiment settings: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: {e}") from e

    def validate(self) -> None:
        if any(x <= 0 for x in self.d_l_weeks):
            raise ConfigError("d_l_weeks must be positive")
        if self.d_t_weeks <= 0:
            raise ConfigError("d_t_weeks must be positive")
        if any(x < 0 for x in self.delta_weeks):
            raise ConfigError("delta_weeks must be non-negative")
        for fs in self.feature_sets:
            if fs not in ("nlp", "context", "all"):
                raise ConfigError(f"unknown feature set {fs!r}")
        for t in self.thetas:
            Theta.parse(t)
        if self.binning not in ("naive", "balanced"):
            raise ConfigError(f"unknown binning {self.binning!r}")
        unknown = set(self.forest) - set(ForestParams.__dataclass_fields__) | ({"seed"} & set(self.forest))
        if unknown:
            raise ConfigError(f"unsupported forest settings: {sorted(unknown)}")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    def cells(self) -> list:
        return [
            Cell(float(dl), float(dt), Theta.parse(th), fs)
            for dl, dt, th, fs in itertools.product(self.d_l_weeks, self.delta_weeks, self.thetas, self.feature_sets)
        ]

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        d = self.to_dict()
        for volatile in ("workers", "output"):
            d.pop(volatile)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def cell_seed(master: int, cell: Cell) -> int:
    """Seed derived from the cell's identity only, so grid order and
    parallelism cannot change it."""
    h = hashlib.sha256(f"{master}|{cell.key}".encode()).digest()
    return int.from_bytes(h[:4], "big")


def leak_window(dataset: ForumDataset, d_l_weeks: float, anchor="midpoint") -> TimeWindow:
    """Leak window of ``d_l_weeks``; by default it ends at the data midpoint."""
    span = dataset.span
    if span is None:
        raise DataError("dataset has no timestamped activity")
    lo, hi = span
    if anchor == "midpoint":
        leak_end = lo + (hi - lo) // 2
    else:
        try:
            leak_end = int(anchor)
        except (TypeError, ValueError):
            raise ConfigError(f"bad leak anchor {anchor!r}") from None
    d_l = int(round(d_l_weeks * WEEK))
    if d_l <= 0:
        raise ConfigError("leak window must be positive")
    leak = TimeWindow(leak_end - d_l, d_l)
    if leak.start < lo:
        raise ConfigError(f"leak window of {d_l_weeks:g} weeks starts before the data")
    return leak


def windows(dataset: ForumDataset, d_l_weeks: float, delta_weeks: float, d_t_weeks: float,
            anchor="midpoint") -> tuple:
    """``(leak, target)``; the target starts ``delta_weeks`` after the leak ends."""
    leak = leak_window(dataset, d_l_weeks, anchor)
    target = TimeWindow(leak.end + int(round(delta_weeks * WEEK)), int(round(d_t_weeks * WEEK)))
    if target.end > dataset.span[1] + 1:
        raise ConfigError(f"target window (delta {delta_weeks:g}w, {d_t_weeks:g}w long) runs past the data")
    return leak, target


class SkipCell(Exception):
    """Raised when a configuration fails a guard; recorded, not fatal."""


def fit_delay_model(leak: ForumDataset, config: ExperimentConfig, seed: int = 0) -> tuple:
    """Delay model fitted on every thread start of the leak slice."""
    samples = compute_delays(leak)
    if not samples:
        raise FitError("no post-to-message delays in the leak window")
    hist_kw = {"avg_per_bin": config.avg_per_bin} if config.binning == "balanced" else {"bin_width": config.bin_width}
    cands = [config.tau_max_hours] if config.tau_max_hours is not None else config.tau_max_candidates
    sel = select_tau_max(samples, config.binning, cands, tol=config.tau_tol, seed=seed, **hist_kw)
    return sel.model, sel, len(samples)


def prepare_posts(dataset: ForumDataset, window: TimeWindow) -> list:
    """Isolated thread starts inside ``window`` that leave a day of room before its end."""
    isolated = filter_isolated_posts(dataset.thread_starts())
    inside = [p for p in isolated if window.contains(p.ts)]
    return filter_leak_tail(inside, window)


@dataclass
class Side:
    """Everything derived from one forum's leak window."""

    dataset: ForumDataset
    leak: TimeWindow
    target: TimeWindow
    model: DelayModel
    selection: object
    n_delays: int
    posts: list
    weights: list
    theta: float


def _prepare_side(dataset: ForumDataset, config: ExperimentConfig, cell: Cell) -> Side:
    leak, target = windows(dataset, cell.d_l_weeks, cell.delta_weeks, config.d_t_weeks, config.anchor)
    leak_ds = slice_dataset(dataset, leak)
    model, sel, n_delays = fit_delay_model(leak_ds, config, seed=config.seed)
    posts = prepare_posts(dataset, leak)
    if not posts:
        raise SkipCell("no training posts survive the filters")
    weights = likelihoods(posts, leak_ds, model)
    theta = cell.theta.resolve(weights)
    return Side(dataset, leak, target, model, sel, n_delays, posts, weights, theta)


_TABLE_CACHE: dict = {}


def _public_table(dataset: ForumDataset, window: TimeWindow, strategy: str, seed: int):
    """Centrality table of the public graph over ``window``, memoised per process."""
    key = (id(dataset), window.start, window.duration, strategy, seed)
    hit = _TABLE_CACHE.get(key)
    if hit is not None and hit[0] is dataset:
        return hit[1]
    pub = slice_dataset(dataset, window).public_view()
    table = centrality_table(build_public_graph(pub, strategy), seed=seed)
    if len(_TABLE_CACHE) >= 8:
        _TABLE_CACHE.pop(next(iter(_TABLE_CACHE)))
    _TABLE_CACHE[key] = (dataset, table)
    return table


def _test_data(side: Side, vocab, config: ExperimentConfig, seed: int) -> tuple:
    """Target-window features (public data only) and ground-truth labels."""
    dataset, target = side.dataset, side.target
    public = slice_dataset(dataset, target).public_view()
    history = TimeWindow(target.start - side.leak.duration, side.leak.duration)
    table = _public_table(dataset, history, config.strategy, config.seed)
    posts = prepare_posts(dataset, target)
    if not posts:
        raise SkipCell("no test posts in the target window")
    assert not public.messages  # features never see private messages
    X, _ = feature_matrix(posts, public, vocab, table)
    truth = label_posts(posts, slice_dataset(dataset, target), side.model, side.theta)
    return X, truth


def _train(side: Side, config: ExperimentConfig, cell: Cell, seed: int) -> tuple:
    labeling = label_posts(side.posts, slice_dataset(side.dataset, side.leak), side.model, side.theta)
    frac = labeling.positive_fraction
    if frac < MIN_POSITIVE_FRACTION:
        raise SkipCell(f"positive fraction {frac:.4f} below {MIN_POSITIVE_FRACTION}")
    if frac == 1.0:
        raise SkipCell("every training post is positive")
    leak_public = slice_dataset(side.dataset, side.leak).public_view()
    vocab = build_vocabulary(side.posts, leak_public)
    table = _public_table(side.dataset, side.leak, config.strategy, config.seed)
    X, _ = feature_matrix(side.posts, leak_public, vocab, table)
    cols = feature_set_columns(vocab, cell.feature_set)
    if cols.size == 0:
        raise SkipCell(f"feature set {cell.feature_set!r} is empty")
    params = ForestParams(**{**config.forest, "seed": seed})
    forest = train(X[:, cols], labeling.labels, params)
    return labeling, vocab, X, cols, forest


def _delay_summary(side: Side) -> dict:
    m = side.model
    return {
        "coefficients": {k: getattr(m, k) for k in ("a1", "b1", "a2", "b2", "c")},
        "tau_max_hours": m.tau_max_hours,
        "tau_max_stable": side.selection.stable,
        "r_squared": m.r_squared,
        "n_delays": side.n_delays,
        "binning": m.method,
    }


def _evaluate(forest, X_test, cols, truth, labeling, vocab, X_train, top_k) -> dict:
    y = truth.labels
    scores = predict_scores(forest, X_test[:, cols])
    out = {
        "test_posts": len(y),
        "test_positive_fraction": truth.positive_fraction,
        "accuracy": accuracy(scores, y, 0.5),
    }
    if 0 < y.sum() < len(y):
        curve = roc(scores, y)
        out["auc"] = curve.auc
        out["roc"] = [[f, t] for f, t, _ in curve.points()]
        out["_curve"] = curve
    else:
        out["auc"] = None
        out["roc"] = []
    names = vocab.feature_names()
    gains = info_gain(X_train[:, cols], labeling.labels)[:top_k]
    out["info_gain"] = [[names[cols[j]], g] for j, g in gains]
    out["_scores"] = scores
    return out


def run_experiment(dataset: ForumDataset, config: ExperimentConfig, cell: Cell,
                   output: Optional[Path] = None) -> dict:
    """Run one grid cell and return its report. Guard failures give ``status='skipped'``."""
    seed = cell_seed(config.seed, cell)
    report = _report_header(config, cell, seed)
    try:
        side = _prepare_side(dataset, config, cell)
        report["delay_model"] = _delay_summary(side)
        report["theta_value"] = side.theta
        labeling, vocab, X, cols, forest = _train(side, config, cell, seed)
        report["train_posts"] = len(labeling.posts)
        report["positive_fraction"] = labeling.positive_fraction
        X_test, truth = _test_data(side, vocab, config, seed)
        res = _evaluate(forest, X_test, cols, truth, labeling, vocab, X, config.top_k)
        if res["auc"] is None:
            raise SkipCell("target labels hold a single class")
    except SkipCell as e:
        report.update(status="skipped", reason=str(e))
        return report
    except (ConfigError, FitError, DataError, ValueError) as e:
        report.update(status="error", reason=f"{type(e).__name__}: {e}")
        return report
    curve, scores = res.pop("_curve"), res.pop("_scores")
    report.update(res)
    report["status"] = "ok"
    if output is not None:
        _write_cell(Path(output), side, labeling, truth, forest, curve, scores, report)
    return report


def _report_header(config: ExperimentConfig, cell: Cell, seed: int) -> dict:
    return {
        "cell": cell.key,
        "d_l_weeks": cell.d_l_weeks,
        "delta_weeks": cell.delta_weeks,
        "theta": cell.theta.label,
        "feature_set": cell.feature_set,
        "seed": seed,
        "master_seed": config.seed,
        "config_hash": config.digest(),
        "version": __version__,
        "audit": {"feature_inputs_private_messages": 0},
        "status": "pending",
        "reason": "",
    }


def _write_cell(directory: Path, side, labeling, truth, forest, curve, scores, report) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    (directory / "model.json").write_text(forest.to_json())
    (directory / "delay_model.json").write_text(side.model.to_json())
    labeling.to_csv(directory / "labels.csv")
    truth.to_csv(directory / "test_labels.csv")
    curve.to_csv(directory / "roc.csv")
    with open(directory / "scores.csv", "w") as fh:
        fh.write("post_id,score,label\n")
        for p, s in zip(truth.posts, scores):
            fh.write(f"{p.post_id},{s!r},{p.label}\n")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def summary_rows(reports: list) -> list:
    return [
        {
            "d_l": _fmt(r["d_l_weeks"]), "delta": _fmt(r["delta_weeks"]), "theta": r["theta"],
            "feature_set": r["feature_set"], "status": r["status"],
            "accuracy": _fmt(r.get("accuracy")), "auc": _fmt(r.get("auc")),
            "positive_fraction": _fmt(r.get("positive_fraction")), "reason": r.get("reason", ""),
        }
        for r in reports
    ]


def summary_csv(reports: list) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(summary_rows(reports))
    return buf.getvalue()


_WORKER_DATASET: Optional[ForumDataset] = None


def _run_indexed(args):
    idx, config, cell, out = args
    return idx, run_experiment(_WORKER_DATASET, config, cell, out)


@dataclass
class GridResult:
    reports: list
    summary: str

    @property
    def all_skipped(self) -> bool:
        return bool(self.reports) and all(r["status"] == "skipped" for r in self.reports)


def run_grid(dataset: ForumDataset, config: ExperimentConfig, output=None) -> GridResult:
    """Run every cell of the configured grid.

    Cells run in a process pool when ``config.workers > 1``; results are ordered
    by cell index, so the summary does not depend on the worker count.
    """
    global _WORKER_DATASET
    config.validate()
    cells = config.cells()
    out = Path(output) if output is not None else (Path(config.output) if config.output else None)
    jobs = [(i, config, c, out / "cells" / c.key if out else None) for i, c in enumerate(cells)]
    _WORKER_DATASET = dataset
    try:
        if config.workers > 1 and len(cells) > 1:
            ctx = multiprocessing.get_context("fork")
            with ProcessPoolExecutor(min(config.workers, len(cells)), mp_context=ctx) as pool:
                results = list(pool.map(_run_indexed, jobs))
        else:
            results = [_run_indexed(j) for j in jobs]
    finally:
        _WORKER_DATASET = None
    reports = [r for _, r in sorted(results, key=lambda ir: ir[0])]
    summary = summary_csv(reports)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.csv").write_text(summary)
        (out / "grid_report.json").write_text(json.dumps(
            {"config": config.to_dict(), "config_hash": config.digest(), "version": __version__,
             "cells": reports}, indent=1, sort_keys=True) + "\n")
    return GridResult(reports, summary)


def run_cross_forum(train_dataset: ForumDataset, test_dataset: ForumDataset, config: ExperimentConfig,
                    cell: Cell) -> dict:
    """Train on forum A's leak window, test on forum B's target window.

    Forum B's ground truth uses its own delay model and threshold, fitted on
    B's leak window. The intra-forum result on B is included for comparison.
    """
    seed = cell_seed(config.seed, cell)
    report = _report_header(config, cell, seed)
    report["mode"] = "cross-forum"
    try:
        side_a = _prepare_side(train_dataset, config, cell)
        side_b = _prepare_side(test_dataset, config, cell)
        labeling, vocab, X, cols, forest = _train(side_a, config, cell, seed)
        X_test, truth = _test_data(side_b, vocab, config, seed)
        res = _evaluate(forest, X_test, cols, truth, labeling, vocab, X, config.top_k)
        if res["auc"] is None:
            raise SkipCell("target labels hold a single class")
    except SkipCell as e:
        report.update(status="skipped", reason=str(e))
        return report
    except (ConfigError, FitError, DataError, ValueError) as e:
        report.update(status="error", reason=f"{type(e).__name__}: {e}")
        return report
    res.pop("_curve")
    res.pop("_scores")
    report.update(res)
    report["positive_fraction"] = labeling.positive_fraction
    report["status"] = "ok"
    intra = run_experiment(test_dataset, config, cell)
    report["intra_forum_auc"] = intra.get("auc")
    return report


def load_for_experiment(config: ExperimentConfig) -> ForumDataset:
    if not config.dataset:
        raise ConfigError("no dataset path configured")
    ds, _ = load_dataset(config.dataset, strict=False)
    return ds


def single_cell(config: ExperimentConfig) -> Cell:
    """The first cell of the grid, for commands that run one configuration."""
    return config.cells()[0]


__all__ = [
    "Cell", "ExperimentConfig", "GridResult", "Theta", "cell_seed", "fit_delay_model", "leak_window",
    "load_for_experiment",
    "prepare_posts", "run_cross_forum", "run_experiment", "run_grid", "single_cell", "summary_csv", "windows",
]
