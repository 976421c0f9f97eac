"""Experiment harness: train every method under one config, evaluate, time, report."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from threadpoolctl import threadpool_limits

from . import config as config_mod
from . import data as data_mod
from .baselines import (
    baseline_arch,
    baseline_predict,
    bootstrap_train,
    ensemble_train,
    mc_dropout_train,
)
from .den import DenSpec, den_init, den_predict, den_train
from .exceptions import ClockError, ConfigError, DivnetError, FormatError, TaskError
from .metrics import (
    CLASSIFICATION_VARIANCE,
    EnsemblePrediction,
    accuracy,
    regression_metrics,
    uncertainty_report,
)
from .nn import FlopCounter
from .serialization import load_model, save_model
from .training import TrainConfig, TrainLog

log = logging.getLogger(__name__)

CSV_TAIL = ["avg_confidence", "avg_variance", "avg_entropy", "inference_time_s",
            "inference_time_std_s", "flops", "seed", "config_hash"]
TIMING_FIELDS = ("inference_time_s", "inference_time_std_s", "per_sample_us")

REGRESSION_METRICS = ["mse", "mae", "r2", "ood_avg_variance"]
CLASSIFICATION_METRICS = ["accuracy", "member_0_accuracy"]
OOD_METRICS = CLASSIFICATION_METRICS + ["ood_accuracy", "ood_avg_confidence", "ood_avg_variance",
                                        "ood_avg_entropy", "entropy_gap"]
DEFAULT_MC_DROPOUT = 0.1


@dataclass
class MethodRow:
    method: str
    params: int | None = None
    metrics: dict = field(default_factory=dict)
    avg_confidence: float | None = None
    avg_variance: float | None = None
    avg_entropy: float | None = None
    inference_time_s: float | None = None
    inference_time_std_s: float | None = None
    flops: int | None = None
    seed: int | None = None
    config_hash: str = ""
    per_sample_us: float | None = None
    status: str = "ok"
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.status != "ok"


@dataclass
class BenchReport:
    task: str
    metric_names: list
    rows: list = field(default_factory=list)
    config_hash: str = ""
    seed: int = 0
    meta: dict = field(default_factory=dict)
    series: dict | None = field(default=None, compare=False)
    logs: dict = field(default_factory=dict, compare=False)

    @property
    def failed(self) -> bool:
        return any(r.failed for r in self.rows)

    def row(self, method: str) -> MethodRow:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)

    def without_timing(self) -> dict:
        """Every field except wall-clock measurements, for reproducibility checks."""
        d = asdict(self)
        d.pop("series", None)
        d.pop("logs", None)
        for r in d["rows"]:
            for k in TIMING_FIELDS:
                r.pop(k)
        return d


# ---------------------------------------------------------------------------
# timing


def time_inference(predict: Callable, batch, R: int = 10, W: int = 2,
                   clock: Callable[[], float] = time.perf_counter, record: list | None = None) -> tuple[float, float]:
    """Mean and (population) std of ``R`` timed ``predict(batch)`` calls after ``W`` warmups.

    Only the call itself sits between the two clock readings. Runs with BLAS
    pools limited to one thread.
    """
    if R < 3:
        raise ConfigError(f"timing_repeats: must be >= 3, got {R}")
    if W < 0:
        raise ConfigError(f"timing_warmup: must be >= 0, got {W}")
    durations = []
    with threadpool_limits(limits=1):
        for _ in range(W):
            predict(batch)
        for _ in range(R):
            start = clock()
            predict(batch)
            end = clock()
            if end < start:
                raise ClockError(f"clock went backwards ({start} -> {end})")
            durations.append(end - start)
    if record is not None:
        record.extend(durations)
    d = np.asarray(durations)
    return float(d.mean()), float(d.std())


def compare_inference(predict_a: Callable, predict_b: Callable, batch, R: int = 10, W: int = 2,
                      clock: Callable[[], float] = time.perf_counter) -> tuple[list, list]:
    """Interleaved timings of two predictors so drifts in machine load hit both alike."""
    a, b = [], []
    for _ in range(R):
        time_inference(predict_a, batch, 3, W if not a else 0, clock, record=a)
        time_inference(predict_b, batch, 3, W if not b else 0, clock, record=b)
    # keep the median of each triple as that repetition's reading
    med = lambda xs: [float(np.median(xs[i:i + 3])) for i in range(0, len(xs), 3)]
    return med(a), med(b)


def count_macs(predict: Callable, batch) -> int:
    with FlopCounter() as fc:
        predict(batch)
    return fc.macs


# ---------------------------------------------------------------------------
# data and models


@dataclass
class TaskData:
    train: data_mod.Dataset
    test: data_mod.Dataset
    ood: data_mod.Dataset | None = None
    test_truth: np.ndarray | None = None
    source: str = ""


def load_task_data(cfg: dict) -> TaskData:
    task, d, seed = cfg["task"], cfg["data"], int(cfg["seed"])
    if task == "toy_regression":
        toy = data_mod.ToyConfig(**d["toy"])
        full, truth = data_mod.toy_generate(toy)
        order = np.random.default_rng([seed, 11]).permutation(len(full))
        n_test = int(round(len(full) * float(d["test_fraction"])))
        test_idx, train_idx = np.sort(order[:n_test]), np.sort(order[n_test:])
        ood = data_mod.toy_ood(toy, float(d["ood_delta"]), float(d["ood_x_hi"]))
        return TaskData(full.take(train_idx), full.take(test_idx), ood, truth[test_idx], "toy")

    root = data_mod.data_root(d.get("data_dir"))
    train_pair = data_mod.find_idx_pair(root, d["mnist_subdir"], "train")
    test_pair = data_mod.find_idx_pair(root, d["mnist_subdir"], "test")
    if train_pair and test_pair:
        train = data_mod.idx_load(*train_pair, name="mnist-train", n_classes=10)
        test = data_mod.idx_load(*test_pair, name="mnist-test", n_classes=10)
        if d.get("train_per_class"):
            train = data_mod.subset(train, seed=seed, n_per_class=int(d["train_per_class"]))
        source = "mnist"
    else:
        train = data_mod.synthetic_classification(int(d["synthetic_train_per_class"]), seed=[seed, 1],
                                                  name="synthetic-train")
        test = data_mod.synthetic_classification(int(d["synthetic_test_per_class"]), seed=[seed, 2],
                                                 name="synthetic-test")
        source = "synthetic"
    ood = None
    if task == "ood_eval":
        ood_pair = data_mod.find_idx_pair(root, d["notmnist_subdir"], "test")
        if ood_pair:
            ood = data_mod.idx_load(*ood_pair, name="notmnist-test",
                                    tag=data_mod.OUT_OF_DISTRIBUTION, n_classes=10)
            source += "+notmnist"
        else:
            ood = data_mod.synthetic_ood(int(d["ood_samples"]), train.features.shape[1], seed=[seed, 3])
            source += "+uniform_noise"
    return TaskData(train, test, ood, None, source)


def build_spec(cfg: dict, input_dim: int, output_dim: int) -> DenSpec:
    m = cfg["model"]
    task = "regression" if cfg["task"] == "toy_regression" else "classification"
    return DenSpec.build(input_dim, m["trunk"], m["branch"], output_dim, task,
                         int(cfg["branch_count"]), m["activation"], float(m["dropout"]))


def mc_rate(cfg: dict) -> float:
    if cfg["mc_dropout_rate"] is not None:
        return float(cfg["mc_dropout_rate"])
    return float(cfg["model"]["dropout"]) or DEFAULT_MC_DROPOUT


def train_method(method: str, spec: DenSpec, train: data_mod.Dataset, cfg: dict):
    """Returns ``(model, TrainLog)``."""
    tc = TrainConfig.from_dict(cfg["train"])
    seed, K = int(cfg["seed"]), int(cfg["branch_count"])
    if method == "den":
        model = den_init(spec, seed)
        return model, den_train(model, train.features, train.labels, tc, seed, task=train.task)
    if method == "ensemble":
        model = ensemble_train(spec.flat, K, train, tc, seed)
    elif method == "bootstrap":
        model = bootstrap_train(spec.flat, K, train, tc, seed)
    elif method == "mc_dropout":
        model = mc_dropout_train(baseline_arch(spec, mc_rate(cfg)), int(cfg["mc_passes"]), train, tc, seed)
    else:
        raise ConfigError(f"unknown method {method!r}")
    return model, model.log


def predictor(model, seed: int) -> Callable[[np.ndarray], EnsemblePrediction]:
    """The timed prediction path of any method."""
    if hasattr(model, "branches"):
        return lambda X: den_predict(model, X)
    return lambda X: baseline_predict(model, X, seed)


def obtain_model(method: str, spec: DenSpec, data: TaskData, cfg: dict, chash: str,
                 model_dir=None):
    cache = Path(cfg["cache_dir"]) / f"{method}-{chash}.model" if cfg.get("cache_dir") else None
    if cache is not None and cache.exists():
        log.info("%s: reusing cached model %s", method, cache)
        return load_model(cache), TrainLog()
    model, tlog = train_method(method, spec, data.train, cfg)
    for target in (cache, Path(model_dir) / f"{method}.model" if model_dir else None):
        if target is not None:
            save_model(model, target, config_hash=chash, meta={"method": method, "task": cfg["task"]})
    return model, tlog


# ---------------------------------------------------------------------------
# evaluation


def _mean_or_none(x) -> float | None:
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else float(x)


def uncertainty_gap(predict: Callable, id_set: data_mod.Dataset, ood_set: data_mod.Dataset) -> dict:
    """Mean confidence/variance/entropy on both sets and ``entropy_gap = H_ood - H_id``."""
    if id_set.task != "classification" or ood_set.task != "classification":
        raise TaskError("out-of-distribution entropy comparison needs classification data")
    rid = uncertainty_report(predict(id_set.features))
    rood_pred = predict(ood_set.features)
    rood = uncertainty_report(rood_pred)
    out = {f"id_{k}": v for k, v in rid.aggregates.items()}
    out.update({f"ood_{k}": v for k, v in rood.aggregates.items()})
    out["entropy_gap"] = rood.aggregates["avg_entropy"] - rid.aggregates["avg_entropy"]
    if not ood_set.meta.get("unlabelled"):
        out["ood_accuracy"] = accuracy(rood.mean_prediction, ood_set.labels)
    return out


def evaluate(method: str, model, data: TaskData, cfg: dict, chash: str) -> tuple[MethodRow, dict | None]:
    seed = int(cfg["seed"])
    predict = predictor(model, seed)
    test = data.test
    pred = predict(test.features)
    rep = uncertainty_report(pred)
    row = MethodRow(method, params=int(model.parameter_count), seed=seed, config_hash=chash)
    row.avg_variance = _mean_or_none(rep.aggregates["avg_variance"])
    row.avg_confidence = _mean_or_none(rep.aggregates["avg_confidence"])
    row.avg_entropy = _mean_or_none(rep.aggregates["avg_entropy"])
    series = None
    if test.task == "regression":
        mse, mae, r2 = regression_metrics(rep.mean_prediction[:, 0], test.labels)
        ood_pred = predict(data.ood.features)
        ood_rep = uncertainty_report(ood_pred)
        row.metrics = {"mse": mse, "mae": mae, "r2": r2,
                       "ood_avg_variance": float(ood_rep.aggregates["avg_variance"])}
        series = {
            "x": np.concatenate([test.features[:, 0], data.ood.features[:, 0]]),
            "mean": np.concatenate([rep.mean_prediction[:, 0], ood_rep.mean_prediction[:, 0]]),
            "std": np.sqrt(np.concatenate([rep.per_sample_variance, ood_rep.per_sample_variance])),
        }
    else:
        row.metrics = {"accuracy": accuracy(rep.mean_prediction, test.labels),
                       "member_0_accuracy": accuracy(pred.values[0], test.labels)}
        if data.ood is not None:
            gap = uncertainty_gap(predict, test, data.ood)
            row.metrics.update({
                "ood_accuracy": gap.get("ood_accuracy"),
                "ood_avg_confidence": gap["ood_avg_confidence"],
                "ood_avg_variance": gap["ood_avg_variance"],
                "ood_avg_entropy": gap["ood_avg_entropy"],
                "entropy_gap": gap["entropy_gap"],
            })
    row.flops = count_macs(predict, test.features)
    mean_s, std_s = time_inference(predict, test.features, int(cfg["timing_repeats"]),
                                   int(cfg["timing_warmup"]))
    row.inference_time_s, row.inference_time_std_s = mean_s, std_s
    row.per_sample_us = mean_s / len(test) * 1e6
    return row, series


def run_experiment(cfg: dict, model_dir=None) -> BenchReport:
    """Train (or load cached) models for every configured method and report on them.

    A failing method yields a row with ``status="failed"`` instead of aborting
    the whole run.
    """
    cfg = config_mod.resolve(cfg)
    chash = config_mod.config_hash(cfg)
    data = load_task_data(cfg)
    out_dim = 1 if data.train.task == "regression" else int(data.train.n_classes)
    spec = build_spec(cfg, data.train.features.shape[1], out_dim)
    names = {"toy_regression": REGRESSION_METRICS, "mnist_classification": CLASSIFICATION_METRICS,
             "ood_eval": OOD_METRICS}[cfg["task"]]
    report = BenchReport(cfg["task"], list(names), config_hash=chash, seed=int(cfg["seed"]))
    report.meta = {
        "timing_repeats": int(cfg["timing_repeats"]),
        "timing_warmup": int(cfg["timing_warmup"]),
        "data_source": data.source,
        "n_train": len(data.train),
        "n_test": len(data.test),
        "preprocessing": "pixels / 255, no centering" if data.train.task == "classification" else "none",
        "classification_variance": CLASSIFICATION_VARIANCE,
        "flops_unit": "multiply-accumulates of one full-test-set prediction",
    }
    series = {}
    for method in cfg["methods"]:
        try:
            model, tlog = obtain_model(method, spec, data, cfg, chash, model_dir)
            row, s = evaluate(method, model, data, cfg, chash)
            report.logs[method] = tlog.to_dict()
            if s is not None:
                series[method] = s
        except (DivnetError, ArithmeticError, ValueError) as exc:
            log.error("%s failed: %s", method, exc)
            row = MethodRow(method, seed=int(cfg["seed"]), config_hash=chash, status="failed", error=str(exc))
        report.rows.append(row)
    if series:
        report.series = {"methods": series, "amplitude": float(cfg["data"]["toy"]["amplitude"])}
    return report


def ood_experiment(cfg: dict, model_dir=None) -> BenchReport:
    """:func:`run_experiment` on the ``ood_eval`` task: ID and OoD uncertainty side by side."""
    cfg = dict(cfg)
    if cfg.get("task", "ood_eval") != "ood_eval":
        raise ConfigError(f"config key 'task' must be 'ood_eval' for an OoD experiment, got {cfg['task']!r}")
    cfg["task"] = "ood_eval"
    return run_experiment(cfg, model_dir)


# ---------------------------------------------------------------------------
# report files


def csv_header(report: BenchReport) -> list:
    head = ["method", "params"]
    for i in range(1, len(report.metric_names) + 1):
        head += [f"metric{i}_name", f"metric{i}"]
    return head + CSV_TAIL


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_report(report: BenchReport, fmt: str, path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if fmt == "json":
            doc = asdict(report)
            doc.pop("series")
            doc.pop("logs")
            path.write_text(json.dumps(doc, indent=2) + "\n")
        elif fmt == "csv":
            with open(path, "w", newline="") as f:
                w = csv.writer(f)
                w.writerow(csv_header(report))
                for r in report.rows:
                    cells = [r.method, _fmt(r.params)]
                    for name in report.metric_names:
                        cells += [name, _fmt(r.metrics.get(name))]
                    cells += [_fmt(getattr(r, k)) for k in CSV_TAIL]
                    w.writerow(cells)
        else:
            raise ValueError(f"format must be 'csv' or 'json', got {fmt!r}")
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc.strerror}") from exc
    return path


def _num(s: str, kind=float):
    return None if s == "" else kind(s)


def read_report_csv(path, task: str = "", meta: dict | None = None) -> BenchReport:
    """Parse a CSV written by :func:`emit_report`.

    CSV carries no task, report-level metadata or status columns; failed rows
    are recognisable by their empty numeric cells.
    """
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0][:2] != ["method", "params"] or rows[0][-len(CSV_TAIL):] != CSV_TAIL:
        raise FormatError(f"{path}: not a benchmark report CSV")
    n_metrics = (len(rows[0]) - 2 - len(CSV_TAIL)) // 2
    report = BenchReport(task, [], meta=meta or {})
    for cells in rows[1:]:
        r = MethodRow(cells[0], params=_num(cells[1], int))
        names = []
        for i in range(n_metrics):
            name, value = cells[2 + 2 * i], cells[3 + 2 * i]
            names.append(name)
            r.metrics[name] = _num(value)
        tail = dict(zip(CSV_TAIL, cells[2 + 2 * n_metrics:]))
        r.avg_confidence = _num(tail["avg_confidence"])
        r.avg_variance = _num(tail["avg_variance"])
        r.avg_entropy = _num(tail["avg_entropy"])
        r.inference_time_s = _num(tail["inference_time_s"])
        r.inference_time_std_s = _num(tail["inference_time_std_s"])
        r.flops = _num(tail["flops"], int)
        r.seed = _num(tail["seed"], int)
        r.config_hash = tail["config_hash"]
        report.metric_names = names
        report.rows.append(r)
    if report.rows:
        report.config_hash = report.rows[0].config_hash
        report.seed = report.rows[0].seed
    return report


def read_report_json(path) -> BenchReport:
    doc = json.loads(Path(path).read_text())
    rows = [MethodRow(**r) for r in doc.pop("rows")]
    return BenchReport(rows=rows, **doc)


def write_series(report: BenchReport, path) -> Path | None:
    """Plot-ready CSV: x, y_true, then per-method mean and across-member std."""
    if not report.series:
        return None
    methods = report.series["methods"]
    amplitude = report.series["amplitude"]
    first = next(iter(methods.values()))
    order = np.argsort(first["x"], kind="stable")
    x = first["x"][order]
    cols = {"x": x, "y_true": amplitude * np.sin(x)}
    for name, s in methods.items():
        o = np.argsort(s["x"], kind="stable")
        cols[f"{name}_mean"] = s["mean"][o]
        cols[f"{name}_std"] = s["std"][o]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(list(cols))
        for i in range(len(x)):
            w.writerow([repr(float(c[i])) for c in cols.values()])
    return path
