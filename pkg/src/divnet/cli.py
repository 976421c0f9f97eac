"""``divnet`` command line: train, eval, bench, ood, gen-toy, inspect.

Exit codes: 0 success, 1 a method failed, 2 usage/config/format error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import bench
from . import config as config_mod
from . import data as data_mod
from .exceptions import ConfigError, DivnetError, FormatError
from .serialization import load_model, read_header

log = logging.getLogger("divnet")

EXIT_OK, EXIT_METHOD_FAILED, EXIT_USAGE = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="divnet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="JSON experiment config")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--methods", help="comma-separated subset of methods to run")

    common(sub.add_parser("train", help="train every configured method and save the models"))
    ev = sub.add_parser("eval", help="evaluate a saved model on the task's test set")
    common(ev)
    ev.add_argument("--model", required=True, help="model container written by train/bench")
    common(sub.add_parser("bench", help="train, evaluate and time all methods"))
    common(sub.add_parser("ood", help="in- vs out-of-distribution uncertainty comparison"))
    gt = sub.add_parser("gen-toy", help="write the noisy sine dataset as CSV")
    gt.add_argument("--config", help="optional toy_regression config (data.toy section is used)")
    gt.add_argument("--out", required=True)
    gt.add_argument("--seed", type=int, help="noise seed (overrides data.toy.seed)")
    ins = sub.add_parser("inspect", help="describe a saved model")
    ins.add_argument("model")
    return p


def _resolve(args, task: str | None = None) -> dict:
    overrides = {"seed": args.seed}
    if getattr(args, "methods", None):
        overrides["methods"] = [m.strip() for m in args.methods.split(",") if m.strip()]
    if task is not None:
        doc = json.loads(Path(args.config).read_text()) if args.config else {}
        doc.setdefault("task", task)
        if doc["task"] != task:
            raise ConfigError(f"config key 'task' must be {task!r} for this subcommand, got {doc['task']!r}")
        return config_mod.resolve(doc, overrides)
    return config_mod.load(args.config, overrides)


def _summary(row: bench.MethodRow) -> str:
    if row.failed:
        return f"{row.method:<11} FAILED  {row.error}"
    metrics = " ".join(f"{k}={v:.4f}" for k, v in row.metrics.items() if v is not None)
    return (f"{row.method:<11} params={row.params} {metrics} "
            f"time={row.inference_time_s:.6f}s flops={row.flops}")


def _write_run(report: bench.BenchReport, cfg: dict, out: Path) -> None:
    config_mod.write_snapshot(cfg, out / "resolved_config.json")
    bench.emit_report(report, "csv", out / "report.csv")
    bench.emit_report(report, "json", out / "report.json")
    if report.series:
        bench.write_series(report, out / "series.csv")
    logs = out / "logs"
    logs.mkdir(parents=True, exist_ok=True)
    for method, tlog in report.logs.items():
        (logs / f"{method}.json").write_text(json.dumps(tlog) + "\n")
    for row in report.rows:
        print(_summary(row))


def cmd_bench(args, task: str | None = None) -> int:
    cfg = _resolve(args)
    if task == "ood_eval" and cfg["task"] != "ood_eval":
        raise ConfigError(f"config key 'task' must be 'ood_eval' for the ood subcommand, got {cfg['task']!r}")
    out = Path(args.out)
    config_mod.write_snapshot(cfg, out / "resolved_config.json")
    runner = bench.ood_experiment if task == "ood_eval" else bench.run_experiment
    report = runner(cfg, model_dir=out / "models")
    _write_run(report, cfg, out)
    return EXIT_METHOD_FAILED if report.failed else EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve(args)
    out = Path(args.out)
    config_mod.write_snapshot(cfg, out / "resolved_config.json")
    chash = config_mod.config_hash(cfg)
    data = bench.load_task_data(cfg)
    out_dim = 1 if data.train.task == "regression" else int(data.train.n_classes)
    spec = bench.build_spec(cfg, data.train.features.shape[1], out_dim)
    failed = False
    (out / "logs").mkdir(parents=True, exist_ok=True)
    for method in cfg["methods"]:
        try:
            model, tlog = bench.obtain_model(method, spec, data, cfg, chash, out / "models")
        except (DivnetError, ArithmeticError, ValueError) as exc:
            print(f"{method:<11} FAILED  {exc}")
            failed = True
            continue
        (out / "logs" / f"{method}.json").write_text(json.dumps(tlog.to_dict()) + "\n")
        final = tlog.final
        loss = f"final_loss={sum(final) / len(final):.6f}" if final else "cached"
        print(f"{method:<11} params={model.parameter_count} {loss}")
    return EXIT_METHOD_FAILED if failed else EXIT_OK


def cmd_eval(args) -> int:
    cfg = _resolve(args)
    out = Path(args.out)
    config_mod.write_snapshot(cfg, out / "resolved_config.json")
    chash = config_mod.config_hash(cfg)
    header = read_header(args.model)
    model = load_model(args.model)
    method = header.get("meta", {}).get("method") or header["kind"]
    data = bench.load_task_data(cfg)
    names = {"toy_regression": bench.REGRESSION_METRICS,
             "mnist_classification": bench.CLASSIFICATION_METRICS,
             "ood_eval": bench.OOD_METRICS}[cfg["task"]]
    report = bench.BenchReport(cfg["task"], list(names), config_hash=chash, seed=int(cfg["seed"]))
    report.meta = {"model": str(args.model), "data_source": data.source}
    try:
        row, series = bench.evaluate(method, model, data, cfg, chash)
    except (DivnetError, ArithmeticError, ValueError) as exc:
        row = bench.MethodRow(method, seed=int(cfg["seed"]), config_hash=chash, status="failed", error=str(exc))
        series = None
    report.rows.append(row)
    if series is not None:
        report.series = {"methods": {method: series}, "amplitude": float(cfg["data"]["toy"]["amplitude"])}
    _write_run(report, cfg, out)
    return EXIT_METHOD_FAILED if report.failed else EXIT_OK


def cmd_gen_toy(args) -> int:
    cfg = _resolve(args, task="toy_regression")
    toy = dict(cfg["data"]["toy"])
    if args.seed is not None:
        toy["seed"] = args.seed
    tcfg = data_mod.ToyConfig(**toy)
    ds, truth = data_mod.toy_generate(tcfg)
    path = data_mod.write_toy_csv(Path(args.out) / "toy.csv", ds, truth)
    print(f"wrote {len(ds)} rows to {path}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    header = read_header(args.model)
    model = load_model(args.model)
    print(f"kind: {header['kind']}")
    if header["kind"] == "den":
        spec = header["spec"]
        print(f"task: {spec['task']}")
        print(f"K: {spec['branch_count']}")
        print("trunk: " + _layers(spec["trunk"]))
        print("branch: " + _layers(spec["branch"]))
    else:
        print(f"task: {header.get('task', '-')}")
        if "members" in header:
            print(f"K: {header['members']}")
        if "passes" in header:
            print(f"passes: {header['passes']}")
        print("arch: " + _layers(header["arch"]))
    print(f"parameter_count: {model.parameter_count}")
    print(f"config_hash: {header.get('config_hash') or '-'}")
    return EXIT_OK


def _layers(specs) -> str:
    parts = [str(specs[0]["input_dim"])]
    for s in specs:
        tag = f"{s['output_dim']}:{s['activation']}"
        if s["dropout_rate"]:
            tag += f"(p={s['dropout_rate']})"
        parts.append(tag)
    return " -> ".join(parts)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "bench":
            return cmd_bench(args)
        if args.command == "ood":
            return cmd_bench(args, task="ood_eval")
        if args.command == "train":
            return cmd_train(args)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "gen-toy":
            return cmd_gen_toy(args)
        return cmd_inspect(args)
    except (ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except json.JSONDecodeError as exc:
        print(f"error: config is not valid JSON: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, DivnetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
