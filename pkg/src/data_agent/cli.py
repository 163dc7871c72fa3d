"""Command-line entry point: ``data-agent {gen-data,train,bench,propcheck,report}``.

Exit codes: 0 success, 2 configuration error, 3 data or IO error,
4 propcheck failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import propcheck
from .config import ConfigError, RunConfig, build_config, parse_config_text, render_config
from .data import DataFormatError, NoiseSpec, gen_default_benchmark, gen_rings, inject_label_noise, load, load_csv, save
from .loop import run_training

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_PROPCHECK = 0, 2, 3, 4

METRICS_HEADER = ("run_id,strategy,seed,epoch,selected_count,weight_r,mean_reward,train_loss,test_acc,"
                  "train_forwards,score_forwards,agent_forwards,wallclock_ms").split(",")
AGGREGATE_HEADER = ["strategy", "ratio", "seeds", "final_acc_mean", "final_acc_std",
                    "train_forwards_mean", "train_forwards_std", "total_forwards_mean", "total_forwards_std"]
DATASET_FILE = "dataset.txt"


def _fmt(value) -> str:
    """Shortest round-trip text for floats so reruns are byte-identical."""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _config(args, overrides: dict | None = None) -> RunConfig:
    """Merge the config file, then flags, into a validated RunConfig."""
    values = {}
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"{args.config}: cannot read config ({exc})") from None
        values = parse_config_text(text, args.config)
    values.update(overrides or {})
    if getattr(args, "noise", None) is not None:
        values["dataset.noise_rate"] = args.noise
    return build_config(values, args.out)


def resolve_dataset(cfg: RunConfig):
    path = cfg["dataset.path"]
    seed = cfg["dataset.seed"]
    if path:
        if path.endswith(".csv"):
            ds = load_csv(path, "label", seed=seed)
        else:
            ds = load(path)
    elif cfg["dataset.generator"] == "rings":
        ds = gen_rings(seed=seed)
    else:
        ds = gen_default_benchmark(seed)
    rate = cfg["dataset.noise_rate"]
    if rate > 0:
        ds, _ = inject_label_noise(ds, NoiseSpec(rate, seed=seed))
    return ds


def run_cell(cfg: RunConfig, strategy: str, seed: int, timing: bool = False, dataset=None):
    """One (strategy, seed) run; returns (metrics CSV text, event-log text)."""
    ds = dataset if dataset is not None else resolve_dataset(cfg)
    run_id = f"{strategy}-seed{seed}"
    result = run_training(ds, strategy, cfg.loop_for_seed(seed), cfg.model, cfg.agent, cfg.reward)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_HEADER)
    events = []
    for m in result.metrics:
        wall = m.wallclock_ms if timing else 0.0
        writer.writerow([run_id, strategy, seed, m.epoch, m.selected_count, _fmt(m.weight_r), _fmt(m.mean_reward),
                         _fmt(m.train_loss), _fmt(m.test_accuracy), m.train_forwards, m.score_forwards,
                         m.agent_forwards, _fmt(wall)])
        events.append({"event": "epoch", "run_id": run_id, "epoch": m.epoch,
                       "selected_count": m.selected_count, "test_acc": m.test_accuracy})
    for i, u in enumerate(result.state.updates):
        events.append({"event": "agent_update", "run_id": run_id, "update": i, "actor_loss": u.actor_loss,
                       "critic_loss": u.critic_loss, "mean_ratio": u.mean_ratio, "forwards": u.forwards})
    log = "".join(json.dumps(e, sort_keys=True) + "\n" for e in events)
    return buf.getvalue(), log


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def aggregate_rows(runs: dict[str, list[dict]], ratio: float) -> list[list[str]]:
    """Per-strategy mean and population std over seeds of final accuracy and forwards.

    ``runs`` maps strategy -> list of final-epoch metric rows (one per seed).
    """
    out = []
    for strategy, finals in runs.items():
        acc = np.array([float(r["test_acc"]) for r in finals])
        train = np.array([float(r["train_forwards"]) for r in finals])
        total = np.array([float(r["train_forwards"]) + float(r["score_forwards"]) + float(r["agent_forwards"])
                          for r in finals])
        out.append([strategy, _fmt(ratio), str(len(finals)), _fmt(acc.mean()), _fmt(acc.std()),
                    _fmt(train.mean()), _fmt(train.std()), _fmt(total.mean()), _fmt(total.std())])
    return out


def cmd_gen_data(args) -> int:
    overrides = {"dataset.seed": args.seed} if args.seed is not None else {}
    cfg = _config(args, overrides)
    ds = resolve_dataset(cfg)
    target = cfg.out_dir / DATASET_FILE
    target.parent.mkdir(parents=True, exist_ok=True)
    save(ds, target)
    print(f"wrote {target} ({ds.n} samples, {len(ds.train_ids)} train, {ds.class_count} classes)")
    return EXIT_OK


def cmd_train(args) -> int:
    overrides = {"bench.seeds": (args.seed,)} if args.seed is not None else {}
    cfg = _config(args, overrides)
    seed = cfg["bench.seeds"][0]
    metrics, log = run_cell(cfg, "agent", seed, args.timing)
    _write(cfg.out_dir / "metrics.csv", metrics)
    _write(cfg.out_dir / "events.jsonl", log)
    _write(cfg.out_dir / "config.txt", render_config(cfg, include_output=False))
    final = metrics.strip().splitlines()[-1].split(",")
    print(f"agent seed {seed}: final test_acc {float(final[8]):.4f}, train_forwards {final[9]}")
    return EXIT_OK


def _bench_cell(job):
    values, strategy, seed, timing = job
    return run_cell(RunConfig(values), strategy, seed, timing)


def cmd_bench(args) -> int:
    overrides = {"bench.seeds": (args.seed,)} if args.seed is not None else {}
    cfg = _config(args, overrides)
    jobs = [(cfg.values, s, seed, args.timing) for s in cfg["bench.strategies"] for seed in cfg["bench.seeds"]]
    if args.parallel and args.parallel > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            outputs = list(pool.map(_bench_cell, jobs))
    else:
        ds = resolve_dataset(cfg)
        outputs = [run_cell(cfg, s, seed, args.timing, ds) for _, s, seed, _ in jobs]
    finals: dict[str, list[dict]] = {}
    for (_, strategy, seed, _), (metrics, log) in zip(jobs, outputs):
        run_id = f"{strategy}-seed{seed}"
        _write(cfg.out_dir / "runs" / f"{run_id}.csv", metrics)
        _write(cfg.out_dir / "events" / f"{run_id}.jsonl", log)
        finals.setdefault(strategy, []).append(list(csv.DictReader(io.StringIO(metrics)))[-1])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(AGGREGATE_HEADER)
    writer.writerows(aggregate_rows(finals, cfg["loop.ratio"]))
    _write(cfg.out_dir / "aggregate.csv", buf.getvalue())
    _write(cfg.out_dir / "config.txt", render_config(cfg, include_output=False))
    print(buf.getvalue(), end="")
    return EXIT_OK


def cmd_propcheck(args) -> int:
    seed = args.seed if args.seed is not None else 0
    results = propcheck.run_all(seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_PROPCHECK


def read_aggregate(path: Path) -> list[dict]:
    """Parse an aggregate CSV, raising DataFormatError with the line number on damage."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}:1: empty aggregate file") from None
        if header != AGGREGATE_HEADER:
            raise DataFormatError(f"{path}:1: unexpected header {header}")
        rows = []
        for row in reader:
            line = reader.line_num
            if len(row) != len(AGGREGATE_HEADER):
                raise DataFormatError(f"{path}:{line}: expected {len(AGGREGATE_HEADER)} fields, got {len(row)}")
            rec = dict(zip(AGGREGATE_HEADER, row))
            try:
                for key in AGGREGATE_HEADER[1:]:
                    rec[key] = float(rec[key])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{line}: {exc}") from None
            rows.append(rec)
    return rows


def format_report(rows: list[dict]) -> str:
    """Strategy x ratio table; cells read 'acc% +/- std (train fwd)'."""
    ratios = sorted({r["ratio"] for r in rows})
    strategies = []
    for r in rows:
        if r["strategy"] not in strategies:
            strategies.append(r["strategy"])
    cells = {(r["strategy"], r["ratio"]): r for r in rows}
    head = ["strategy"] + [f"ratio {q:g}" for q in ratios]
    body = []
    for s in strategies:
        line = [s]
        for q in ratios:
            r = cells.get((s, q))
            if r is None:
                line.append("-")
            else:
                line.append(f"{100 * r['final_acc_mean']:.2f} +/- {100 * r['final_acc_std']:.2f} "
                            f"({r['train_forwards_mean']:.0f} fwd)")
        body.append(line)
    widths = [max(len(row[i]) for row in [head] + body) for i in range(len(head))]
    render = lambda row: "  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()  # noqa: E731
    return "\n".join([render(head), render(["-" * w for w in widths])] + [render(b) for b in body]) + "\n"


def cmd_report(args) -> int:
    root = Path(args.result_dir)
    paths = sorted(root.rglob("aggregate.csv"))
    if not paths:
        raise DataFormatError(f"{root}: no aggregate.csv found")
    rows = []
    for p in paths:
        rows.extend(read_aggregate(p))
    print(format_report(rows), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="data-agent", description="RL-driven dynamic data selection engine")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, noise=True):
        p.add_argument("--config", help="flat 'section.key = value' config file")
        p.add_argument("--out", help="output directory (default: output.dir, then $DATA_AGENT_OUT)")
        p.add_argument("--seed", type=int, help="override the seed")
        if noise:
            p.add_argument("--noise", type=float, help="label-noise rate for generated data")

    p = sub.add_parser("gen-data", help="write the benchmark dataset")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="one agent run with metrics CSV and event log")
    common(p)
    p.add_argument("--timing", action="store_true", help="record wall-clock ms (breaks byte-identical reruns)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="strategies x seeds matrix with aggregate CSV")
    common(p)
    p.add_argument("--parallel", type=int, default=1, help="worker processes for independent cells")
    p.add_argument("--timing", action="store_true", help="record wall-clock ms (breaks byte-identical reruns)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("propcheck", help="numerical oracles for the reward propositions")
    p.add_argument("--seed", type=int, help="oracle seed (default 0)")
    p.set_defaults(func=cmd_propcheck)

    p = sub.add_parser("report", help="print the strategy x ratio table from aggregate CSVs")
    p.add_argument("result_dir")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
