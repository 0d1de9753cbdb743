"""Command-line entry point: ``rankup run | sweep | report | check``.

Experiments are described by a YAML file with four blocks (``dataset``,
``split``, ``method``, ``output``) plus an optional ``sweep`` block; field
names are listed in ``docs/config.md``. Unknown keys are rejected.

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or input.
Results land in ``<out>/<experiment>/<method>/<seed>/``.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .data import DataSpec, build_splits
from .errors import ConfigError
from .metrics import LOWER_IS_BETTER, METRICS
from .model import save_checkpoint
from .trainer import METHODS, ProtocolReport, TrainConfig, aggregate, train

OUT_ENV = "RANKUP_OUT"
EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

# dataset block keys map onto DataSpec; n_labeled lives in the split block
_DATASET_KEYS = [f.name for f in fields(DataSpec) if f.name != "n_labeled"]
_TRAIN_KEYS = [k for k in TrainConfig.field_names() if k != "seeds"]


class InputError(Exception):
    """A results directory or summary file that cannot be used."""


@dataclass
class OutputBlock:
    directory: str = None
    checkpoints: bool = True
    dump_table: bool = False


@dataclass
class SweepBlock:
    methods: list = field(default_factory=list)
    budgets: list = field(default_factory=list)


@dataclass
class ExperimentConfig:
    name: str
    dataset: DataSpec
    train: TrainConfig
    output: OutputBlock = field(default_factory=OutputBlock)
    sweep: SweepBlock = None

    @property
    def seeds(self):
        return list(self.train.seeds)

    def to_dict(self):
        data = asdict(self.dataset)
        n_labeled = data.pop("n_labeled")
        train = self.train.to_dict()
        seeds = train.pop("seeds")
        d = {
            "experiment": self.name,
            "dataset": data,
            "split": {"n_labeled": n_labeled, "seeds": seeds},
            "method": train,
            "output": asdict(self.output),
        }
        if self.sweep is not None:
            d["sweep"] = asdict(self.sweep)
        return d


def _check_keys(block, allowed, where):
    if not isinstance(block, dict):
        raise ConfigError(f"expected a mapping, got {type(block).__name__}", field=where)
    unknown = sorted(set(block) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(unknown)}", field=f"{where}.{unknown[0]}")


def _coerce(value, default, name):
    """Match ``value`` to the type implied by the field default."""
    if value is None:
        return None
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float) or default is None and name.endswith("unlabeled_batch_ratio"):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, tuple):
        ok = isinstance(value, (list, tuple)) and all(isinstance(v, int) and not isinstance(v, bool) for v in value)
    elif isinstance(default, str) or default is None:
        ok = isinstance(value, str)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"has the wrong type ({type(value).__name__})", field=name)
    return value


def _build(cls, block, where, **extra):
    defaults = {f.name: f.default for f in fields(cls)}
    kwargs = {}
    for key, value in block.items():
        kwargs[key] = _coerce(value, defaults.get(key), f"{where}.{key}")
    kwargs.update(extra)
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        if exc.field and "." not in exc.field:
            raise ConfigError(exc.message, field=f"{where}.{exc.field}") from None
        raise


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a parsed YAML document and build the experiment."""
    _check_keys(raw, ["experiment", "dataset", "split", "method", "output", "sweep"], "config")
    name = raw.get("experiment", "experiment")
    if not isinstance(name, str) or not name or "/" in name:
        raise ConfigError("must be a non-empty name without '/'", field="experiment")

    split = raw.get("split") or {}
    _check_keys(split, ["n_labeled", "seeds"], "split")
    if "n_labeled" not in split:
        raise ConfigError("is required", field="split.n_labeled")
    n_labeled = _coerce(split["n_labeled"], 0, "split.n_labeled")
    if n_labeled < 1:
        raise ConfigError("must be >= 1", field="split.n_labeled")
    seeds = _coerce(split.get("seeds", [0, 1, 2]), (), "split.seeds")

    dataset = raw.get("dataset") or {}
    _check_keys(dataset, _DATASET_KEYS, "dataset")
    data_spec = _build(DataSpec, dataset, "dataset", n_labeled=n_labeled)
    try:
        data_spec.validate()
    except ConfigError as exc:
        raise ConfigError(exc.message, field=f"dataset.{exc.field}") from None

    method = raw.get("method") or {}
    _check_keys(method, _TRAIN_KEYS, "method")
    train_cfg = _build(TrainConfig, method, "method", seeds=tuple(seeds))

    out = raw.get("output") or {}
    _check_keys(out, [f.name for f in fields(OutputBlock)], "output")
    output = _build(OutputBlock, out, "output")

    sweep = None
    if raw.get("sweep") is not None:
        block = raw["sweep"]
        _check_keys(block, ["methods", "budgets"], "sweep")
        sweep = SweepBlock(list(block.get("methods") or []), list(block.get("budgets") or []))
        if not sweep.methods:
            raise ConfigError("needs at least one method", field="sweep.methods")
        for m in sweep.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}", field="sweep.methods")
        if not sweep.budgets:
            sweep.budgets = [n_labeled]
        for b in sweep.budgets:
            if not isinstance(b, int) or isinstance(b, bool) or b < 1:
                raise ConfigError(f"budgets must be positive integers, got {b!r}", field="sweep.budgets")
    return ExperimentConfig(name, data_spec, train_cfg, output, sweep)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}", field="--config") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path} is not valid YAML: {exc}", field="--config") from None
    return parse_config(raw or {})


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


# -- running -----------------------------------------------------------------


def _write_json(path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _run_seed(train_cfg: TrainConfig, data_spec: DataSpec, seed: int, seed_dir: str, output: OutputBlock):
    """Train one seed and write its artifacts. Module-level so worker processes can run it."""
    rec = train(train_cfg, build_splits(data_spec, seed), seed)
    d = Path(seed_dir)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "log.jsonl", "w") as fh:
        for entry in rec.logs:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    if output.checkpoints:
        save_checkpoint(rec.model, d / "model.ckpt", method=rec.method, seed=seed)
    if output.dump_table and rec.table is not None:
        _write_json(d / "rda_table.json", rec.table.to_dict(train_cfg.total_iters))
    summary = rec.summary()
    _write_json(d / "summary.json", summary)
    return summary


def _map(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, *job) for job in jobs]
        return [f.result() for f in futures]


def run_experiment(cfg: ExperimentConfig, root: Path, workers=1, force=False):
    """Run every seed of one method; returns the protocol summary dict.

    Seeds run in parallel when ``workers > 1``; each is deterministic on its
    own, so the result does not depend on scheduling.
    """
    method_dir = root / cfg.name / cfg.train.method
    if method_dir.exists():
        if not force:
            raise FileExistsError(f"{method_dir} already exists; pass --force to overwrite")
        shutil.rmtree(method_dir)
    method_dir.mkdir(parents=True)
    (method_dir / "config.yaml").write_text(dump_config(cfg))
    jobs = [(cfg.train, cfg.dataset, s, str(method_dir / str(s)), cfg.output) for s in cfg.seeds]
    summaries = _map(_run_seed, jobs, workers)
    per_seed = [{"seed": s["seed"], **s["final"]} for s in summaries]
    mean, std = aggregate(per_seed)
    report = ProtocolReport(cfg.train.method, cfg.seeds, per_seed, mean, std)
    summary = {
        **report.summary(),
        "experiment": cfg.name,
        "n_labeled": cfg.dataset.n_labeled,
        "config": cfg.to_dict(),
    }
    _write_json(method_dir / "summary.json", summary)
    return summary


def output_root(cli_out, cfg: ExperimentConfig = None) -> Path:
    if cli_out:
        return Path(cli_out)
    if cfg is not None and cfg.output.directory:
        return Path(cfg.output.directory)
    return Path(os.environ.get(OUT_ENV, "out"))


def _with_seeds(cfg: ExperimentConfig, seed_list):
    if seed_list is None:
        return cfg
    try:
        seeds = tuple(int(s) for s in seed_list.split(",") if s.strip())
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {seed_list!r}", field="--seed-list") from None
    if not seeds:
        raise ConfigError("is empty", field="--seed-list")
    return replace(cfg, train=replace(cfg.train, seeds=seeds))


def cmd_run(config, out=None, force=False, workers=1, seed_list=None):
    cfg = _with_seeds(load_config(config), seed_list)
    root = output_root(out, cfg)
    summary = run_experiment(cfg, root, workers=workers, force=force)
    print(f"{cfg.train.method}: " + "  ".join(f"{k} {summary['mean'][k]:.4g}" for k in METRICS))
    print(f"wrote {root / cfg.name / cfg.train.method}")
    return EXIT_OK


def _sweep_cell(cfg, method, budget):
    return replace(
        cfg,
        name=f"{cfg.name}-L{budget}",
        dataset=replace(cfg.dataset, n_labeled=budget),
        train=replace(cfg.train, method=method),
    )


def _cell_worker(cell, root, force):
    try:
        return run_experiment(cell, Path(root), workers=1, force=force), None
    except Exception as exc:  # recorded per cell; the sweep keeps going
        return None, f"{type(exc).__name__}: {exc}"


def cmd_sweep(config, out=None, force=False, resume=False, workers=1, seed_list=None):
    cfg = _with_seeds(load_config(config), seed_list)
    if cfg.sweep is None:
        raise ConfigError("the config has no sweep block", field="sweep")
    root = output_root(out, cfg)
    cells, results, failures = [], {}, []
    for budget in cfg.sweep.budgets:
        for method in cfg.sweep.methods:
            cell = _sweep_cell(cfg, method, budget)
            done = root / cell.name / method / "summary.json"
            if resume and done.exists():
                results[(method, budget)] = json.loads(done.read_text())
                print(f"skip {cell.name}/{method} (complete)")
                continue
            cells.append((method, budget, cell))
    jobs = [(cell, str(root), force or resume) for _, _, cell in cells]
    for (method, budget, cell), (summary, err) in zip(cells, _map(_cell_worker, jobs, workers)):
        if err is None:
            results[(method, budget)] = summary
            print(f"done {cell.name}/{method}: mae {summary['mean']['mae']:.4g}")
        else:
            failures.append((method, budget, err))
            print(f"FAILED {cell.name}/{method}: {err}", file=sys.stderr)
    path = root / f"{cfg.name}-sweep.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(sweep_csv(results, cfg.sweep.methods, cfg.sweep.budgets))
    print(f"wrote {path}")
    return EXIT_RUNTIME if failures else EXIT_OK


def sweep_csv(results, methods, budgets):
    """One row per method; columns ``L<budget>_<metric>_{mean,std}``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["method"] + [f"L{b}_{m}_{s}" for b in budgets for m in METRICS for s in ("mean", "std")]
    w.writerow(header)
    for method in methods:
        row = [method]
        for b in budgets:
            r = results.get((method, b))
            for m in METRICS:
                row += [repr(r["mean"][m]), repr(r["std"][m])] if r else ["", ""]
        w.writerow(row)
    return buf.getvalue()


# -- reporting ---------------------------------------------------------------


def format_cell(mean, std):
    """``mean±std`` with the mean at three significant figures and the std at the same decimals."""
    if mean == 0 or not math.isfinite(mean):
        decimals = 2
    else:
        decimals = max(0, 2 - int(math.floor(math.log10(abs(mean)))))
    return f"{mean:.{decimals}f}±{std:.{decimals}f}"


def collect_summaries(results_dir):
    """Protocol summaries under ``results_dir``, keyed by (experiment, method)."""
    root = Path(results_dir)
    if not root.is_dir():
        raise InputError(f"{root} is not a directory")
    found = {}
    for path in sorted(root.rglob("summary.json")):
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"{path}: malformed summary JSON ({exc})") from None
        if not isinstance(data, dict) or "kind" not in data:
            raise InputError(f"{path}: not a rankup summary")
        if data["kind"] != "protocol":
            continue
        try:
            key = (data.get("experiment", path.parent.parent.name), data["method"])
            found[key] = {m: (float(data["mean"][m]), float(data["std"][m])) for m in METRICS}
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"{path}: missing or invalid field {exc}") from None
    if not found:
        raise InputError(f"no summaries found under {root}")
    return found


def render_report(summaries):
    """Return ``(text, csv)``; the best value of each column carries a ``*``."""
    keys = list(summaries)
    multi = len({e for e, _ in keys}) > 1
    labels = [f"{e}/{m}" if multi else m for e, m in keys]
    best = {}
    for metric in METRICS:
        vals = [summaries[k][metric][0] for k in keys]
        best[metric] = min(vals) if LOWER_IS_BETTER[metric] else max(vals)
    cols = [f"{m.upper() if m != 'r2' else 'R2'} ({'lower' if LOWER_IS_BETTER[m] else 'higher'} better)" for m in METRICS]
    rows = []
    for label, k in zip(labels, keys):
        cells = []
        for metric in METRICS:
            mean, std = summaries[k][metric]
            cells.append(format_cell(mean, std) + ("*" if mean == best[metric] else ""))
        rows.append([label] + cells)
    header = ["method"] + cols
    widths = [max(len(r[i]) for r in rows + [header]) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in [header] + rows]
    lines.insert(1, "  ".join("-" * w for w in widths))

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["experiment", "method"] + [f"{m}_{s}" for m in METRICS for s in ("mean", "std")] + ["best"])
    for k in keys:
        vals = [repr(x) for m in METRICS for x in summaries[k][m]]
        flags = ";".join(m for m in METRICS if summaries[k][m][0] == best[m])
        w.writerow([k[0], k[1]] + vals + [flags])
    return "\n".join(lines) + "\n", buf.getvalue()


def cmd_report(results_dir):
    text, table = render_report(collect_summaries(results_dir))
    print(text, end="")
    (Path(results_dir) / "report.csv").write_text(table)
    return EXIT_OK


def cmd_check():
    from .checks import run_all

    results = run_all()
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


# -- argument parsing --------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="rankup", description="RankUp semi-supervised regression experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="experiment YAML file")
        sp.add_argument("--out", help=f"output root (default: config output.directory, ${OUT_ENV}, or ./out)")
        sp.add_argument("--force", action="store_true", help="overwrite existing results")
        sp.add_argument("--workers", type=int, default=1, help="parallel worker processes")
        sp.add_argument("--seed-list", help="comma-separated seeds, overriding split.seeds")

    common(sub.add_parser("run", help="train one method on every seed"))
    sw = sub.add_parser("sweep", help="train every method x label budget cell")
    common(sw)
    sw.add_argument("--resume", action="store_true", help="skip cells that already have a summary")
    rp = sub.add_parser("report", help="render mean±std tables from a results directory")
    rp.add_argument("results_dir")
    sub.add_parser("check", help="run gradient and oracle self-checks")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if getattr(args, "workers", 1) < 1:
            raise ConfigError("must be >= 1", field="--workers")
        if args.command == "run":
            return cmd_run(args.config, args.out, args.force, args.workers, args.seed_list)
        if args.command == "sweep":
            return cmd_sweep(args.config, args.out, args.force, args.resume, args.workers, args.seed_list)
        if args.command == "report":
            return cmd_report(args.results_dir)
        return cmd_check()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
