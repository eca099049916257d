"""Confusion counts, macro-averaged metrics, and the experiment harness.

Metrics are computed per run and then macro averaged: the reported value of
precision, recall, F1 and FPR is the arithmetic mean over runs, not the
metric of the pooled confusion table. The (+, -) spread is the largest
upward and downward deviation of any single run from that mean. A run whose
denominator is zero contributes nothing to that metric's average; it is
excluded with a warning rather than silently counted as zero.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import InsufficientData, LengthMismatch, UndefinedMetric
from .http.message import Flow, Label

POSITIVE = Label.MALICIOUS


class UndefinedMetricWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} is negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn
        )


def _as_label(x) -> Label:
    lab = Label(x) if not isinstance(x, Label) else x
    if lab is Label.UNLABELED:
        raise ValueError("cannot score an unlabeled flow")
    return lab


def confusion(truth: Sequence, predicted: Sequence) -> ConfusionCounts:
    """Tally a single run. Malicious is the positive class."""
    if len(truth) != len(predicted):
        raise LengthMismatch(f"{len(truth)} truth labels vs {len(predicted)} predictions")
    tp = fp = tn = fn = 0
    for t, p in zip(truth, predicted):
        t, p = _as_label(t), _as_label(p)
        if t is POSITIVE:
            if p is POSITIVE:
                tp += 1
            else:
                fn += 1
        else:
            if p is POSITIVE:
                fp += 1
            else:
                tn += 1
    return ConfusionCounts(tp, fp, tn, fn)


@dataclass
class RunMetrics:
    precision: float | None
    recall: float | None
    f1: float | None
    fpr: float | None

    def to_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1, "fpr": self.fpr}


def run_metrics(c: ConfusionCounts) -> RunMetrics:
    """Metrics of one run; a zero denominator yields None plus a warning."""
    precision = recall = f1 = fpr = None
    if c.tp + c.fp:
        precision = c.tp / (c.tp + c.fp)
    else:
        warnings.warn("precision undefined: no positive predictions", UndefinedMetricWarning)
    if c.tp + c.fn:
        recall = c.tp / (c.tp + c.fn)
    else:
        warnings.warn("recall undefined: no positive truth", UndefinedMetricWarning)
    if precision is not None and recall is not None and precision + recall > 0:
        f1 = 2.0 * precision * recall / (precision + recall)
    else:
        warnings.warn("f1 undefined for this run", UndefinedMetricWarning)
    if c.fp + c.tn:
        fpr = c.fp / (c.fp + c.tn)
    else:
        warnings.warn("fpr undefined: no negative truth", UndefinedMetricWarning)
    return RunMetrics(precision, recall, f1, fpr)


METRIC_NAMES = ("precision", "recall", "f1", "fpr")


@dataclass
class MetricSummary:
    mean: float | None
    plus: float | None
    minus: float | None
    defined_runs: int

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "plus": self.plus,
            "minus": self.minus,
            "defined_runs": self.defined_runs,
        }


@dataclass
class MetricsReport:
    experiment_id: str
    runs: list[RunMetrics]
    counts: list[ConfusionCounts]
    macro: dict[str, MetricSummary]
    run_seeds: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "experiment_id": self.experiment_id,
            "run_seeds": list(self.run_seeds),
            "runs": [r.to_dict() for r in self.runs],
            "counts": [
                {"tp": c.tp, "fp": c.fp, "tn": c.tn, "fn": c.fn} for c in self.counts
            ],
            "macro": {k: v.to_dict() for k, v in self.macro.items()},
        }


def metrics(
    counts: Sequence[ConfusionCounts],
    run_seeds: Sequence[int] | None = None,
    experiment_id: str = "",
) -> MetricsReport:
    """Macro-average per-run metrics over a set of runs."""
    if not counts:
        raise UndefinedMetric("no runs to average")
    runs = [run_metrics(c) for c in counts]
    macro: dict[str, MetricSummary] = {}
    for name in METRIC_NAMES:
        values = [getattr(r, name) for r in runs if getattr(r, name) is not None]
        if not values:
            warnings.warn(f"{name} undefined in every run", UndefinedMetricWarning)
            macro[name] = MetricSummary(None, None, None, 0)
            continue
        mean = float(np.mean(values))
        macro[name] = MetricSummary(
            mean=mean,
            plus=float(max(values) - mean),
            minus=float(mean - min(values)),
            defined_runs=len(values),
        )
    return MetricsReport(
        experiment_id=experiment_id,
        runs=runs,
        counts=list(counts),
        macro=macro,
        run_seeds=list(run_seeds or []),
    )


def emit_report(
    report: MetricsReport,
    path: str | Path,
    extra_fields: dict | None = None,
) -> tuple[Path, Path]:
    """Write the report as JSON at ``path`` plus a flat table at ``path``.runs.csv.

    JSON floats survive a read back bit-exactly (repr round trip), so the
    file is the canonical record; the CSV is for eyeballs and spreadsheets.
    ``extra_fields`` (say a provenance block) merges into the JSON document.
    """
    path = Path(path)
    doc = report.to_dict()
    doc.update(extra_fields or {})
    path.write_text(json.dumps(doc, indent=2) + "\n")
    table = Path(str(path) + ".runs.csv")
    with table.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run", "precision", "recall", "f1", "fpr"])
        for i, r in enumerate(report.runs):
            writer.writerow([i] + [_cell(getattr(r, n)) for n in METRIC_NAMES])
        for row_name, attr in (("macro", "mean"), ("plus", "plus"), ("minus", "minus")):
            writer.writerow(
                [row_name] + [_cell(getattr(report.macro[n], attr)) for n in METRIC_NAMES]
            )
    return path, table


def _cell(v: float | None) -> str:
    return "" if v is None else repr(v)


def load_report(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


# ---------------------------------------------------------------------------
# experiment harness


class FlowModel(Protocol):
    def fit(self, flows: Sequence[Flow], y=None, gafs: Sequence[Flow] = ()) -> "FlowModel": ...

    def predict_flows(self, flows: Sequence[Flow]): ...


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    train_malicious: int
    train_benign: int
    test_malicious: int
    test_benign: int
    gaf_count: int = 0
    repeats: int = 5
    seed: int = 0
    # False freezes the run-0 data draw for every run; model seeds still vary
    resample_per_run: bool = True

    def __post_init__(self):
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        for f in ("train_malicious", "train_benign", "test_malicious", "test_benign"):
            if getattr(self, f) < 1:
                raise ValueError(f"{f} must be >= 1")
        if self.gaf_count < 0:
            raise ValueError("gaf_count must be >= 0")


def _preset(name, tm, tb, sm, sb, gaf) -> ExperimentConfig:
    return ExperimentConfig(
        name=name,
        train_malicious=tm,
        train_benign=tb,
        test_malicious=sm,
        test_benign=sb,
        gaf_count=gaf,
        repeats=5,
    )


# Full-scale presets match the published evaluation protocol; the -desk
# variants shrink every count twentyfold so the same shape of experiment
# runs on one workstation core in minutes.
PRESETS: dict[str, ExperimentConfig] = {
    "ep1": _preset("ep1", 20000, 50000, 10000, 10000, 10000),
    "ep2": _preset("ep2", 20000, 50000, 30000, 30000, 10000),
    "ep3": _preset("ep3", 20000, 50000, 27474, 30000, 10000),
    "ep4": _preset("ep4", 20000, 50000, 3138, 4000, 10000),
    "ep1-desk": _preset("ep1-desk", 1000, 2500, 500, 500, 500),
    "ep2-desk": _preset("ep2-desk", 1000, 2500, 1500, 1500, 500),
    "ep3-desk": _preset("ep3-desk", 1000, 2500, 1374, 1500, 500),
    "ep4-desk": _preset("ep4-desk", 1000, 2500, 157, 200, 500),
}


def _draw(pool: list, count: int, rng: np.random.Generator, what: str) -> tuple[list, list]:
    """Sample ``count`` items without replacement; returns (picked, rest)."""
    if count > len(pool):
        raise InsufficientData(f"need {count} {what}, pool has {len(pool)}")
    idx = rng.permutation(len(pool))
    picked = [pool[i] for i in idx[:count]]
    rest = [pool[i] for i in idx[count:]]
    return picked, rest


def run_seed_for(seed: int, run: int) -> int:
    """Stable per-run model seed derived from the experiment seed."""
    return int(np.random.SeedSequence([seed, run, 3]).generate_state(1)[0])


def run_experiment(
    config: ExperimentConfig,
    mal_flows: Sequence[Flow],
    ben_flows: Sequence[Flow],
    model_factory: Callable[[int], FlowModel],
    gaf_flows: Sequence[Flow] = (),
) -> MetricsReport:
    """Repeat train/test resampling ``repeats`` times and macro-average.

    Each run draws its test set first with a dedicated RNG stream, then its
    training set from the remaining pool, then its generated-flow slice.
    The streams are independent, so changing gaf_count leaves every run's
    test set byte for byte identical.
    """
    mal_flows, ben_flows, gaf_flows = list(mal_flows), list(ben_flows), list(gaf_flows)
    counts: list[ConfusionCounts] = []
    seeds: list[int] = []
    for k in range(config.repeats):
        d = k if config.resample_per_run else 0
        rng_test = np.random.default_rng([config.seed, d, 1])
        rng_train = np.random.default_rng([config.seed, d, 0])
        rng_gaf = np.random.default_rng([config.seed, d, 2])
        test_mal, rest_mal = _draw(mal_flows, config.test_malicious, rng_test, "malicious test flows")
        test_ben, rest_ben = _draw(ben_flows, config.test_benign, rng_test, "benign test flows")
        train_mal, _ = _draw(rest_mal, config.train_malicious, rng_train, "malicious training flows")
        train_ben, _ = _draw(rest_ben, config.train_benign, rng_train, "benign training flows")
        gafs: list[Flow] = []
        if config.gaf_count:
            gafs, _ = _draw(gaf_flows, config.gaf_count, rng_gaf, "generated flows")
        run_seed = run_seed_for(config.seed, k)
        seeds.append(run_seed)
        model = model_factory(run_seed)
        model.fit(train_mal + train_ben, gafs=gafs)
        # flows from separately built corpora can share ids, and truth below
        # is looked up by id, so give every test flow a run-unique one
        test = [
            replace(f, flow_id=f"run{k}-{i:06d}")
            for i, f in enumerate(test_mal + test_ben)
        ]
        result = model.predict_flows(test)
        by_id = {f.flow_id: f.label for f in test}
        truth = [by_id[s.flow_id] for s in result.scored]
        pred = [s.label for s in result.scored]
        counts.append(confusion(truth, pred))
    return metrics(counts, run_seeds=seeds, experiment_id=config.name)
