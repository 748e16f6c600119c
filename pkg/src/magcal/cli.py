"""Command-line driver: generate, run, sweep, evaluate, report.

All paths are relative to ``--workdir``. Exit codes: 0 success, 1 invalid
input or usage, 2 a workflow task failed.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
from pathlib import Path

import tomli_w

from .engine.accounting import RunReport, comparison_rows, format_table
from .engine.dag import TASKS
from .engine.execute import execute
from .engine.manifest import Manifest, tomllib
from .engine.scheduler import WorkflowFailed
from .evaluate import evaluate
from .synthgen import MissionConfig, generate_month

log = logging.getLogger("magcal.cli")

EXIT_OK, EXIT_INVALID, EXIT_TASK_FAILED = 0, 1, 2


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _dump_json(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1) + "\n")


def _node_list(text: str) -> list[int]:
    try:
        nodes = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"--nodes expects comma-separated integers, got {text!r}") from None
    if not nodes or min(nodes) < 1:
        raise UsageError("--nodes needs at least one node count, all >= 1")
    return nodes


# -- commands --------------------------------------------------------------------

def cmd_generate(args, root: Path) -> int:
    cfg = MissionConfig()
    if args.config:
        with open(root / args.config, "rb") as fh:
            cfg = MissionConfig.from_dict(tomllib.load(fh))
    if args.n_months is not None:
        cfg = dataclasses.replace(cfg, n_months=args.n_months)
    if args.samples_per_day is not None:
        cfg = dataclasses.replace(cfg, samples_per_day=args.samples_per_day)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)

    out = root / args.out
    if out.exists() and any(out.iterdir()) and not args.force:
        raise UsageError(f"{out} is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    (out / "mission.toml").write_text(tomli_w.dumps(cfg.to_dict()))
    for i, month in enumerate(cfg.months):
        generate_month(i, cfg).write(out)
        print(f"generated {args.out}/{month}")
    if args.manifest:
        path = Manifest(months=cfg.months, seed=cfg.seed, data_dir=args.out).save(root / args.manifest)
        print(f"manifest written to {path}")
    return EXIT_OK


def _run_once(manifest: Manifest, root: Path, n_nodes: int, mode: str, trace: RunReport | None) -> RunReport:
    cluster = dataclasses.replace(manifest.cluster, n_nodes=n_nodes)
    return execute(manifest, root, cluster, mode=mode, trace=trace)


def _print_summary(rep: RunReport) -> None:
    header, rows = comparison_rows([rep], [f"{rep.mode}, {rep.cluster.n_nodes} nodes"])
    print(format_table(header, rows))


def cmd_run(args, root: Path) -> int:
    manifest = Manifest.load(root / args.manifest)
    nodes = args.nodes or manifest.cluster.n_nodes
    trace = None
    if args.mode == "replay":
        if not args.trace:
            raise UsageError("--mode replay needs --trace")
        trace = RunReport.load(root / args.trace)
    rep = _run_once(manifest, root, nodes, args.mode, trace)
    out = root / (args.report or f"reports/run_{args.mode}_n{nodes}.json")
    rep.save(out)
    _print_summary(rep)
    print(f"report written to {out}")
    return EXIT_OK


def cmd_sweep(args, root: Path) -> int:
    manifest = Manifest.load(root / args.manifest)
    nodes = _node_list(args.nodes)
    trace = RunReport.load(root / args.trace) if args.trace else None
    reports = {}
    for i, n in enumerate(nodes):
        local = args.all_local or (i == 0 and trace is None)
        rep = _run_once(manifest, root, n, "local" if local else "replay", None if local else trace)
        if trace is None:
            trace = rep
        reports[n] = rep
        print(f"{n} nodes ({rep.mode}): total makespan {rep.totals()['makespan_s']:.3f} s")

    out = root / args.out
    rows = [(t, n, reports[n].task_summary(t)["makespan_s"]) for t in TASKS for n in nodes]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["task", "n_nodes", "makespan_s"])
    w.writerows(rows)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(buf.getvalue())
    _dump_json(
        {
            "nodes": nodes,
            "modes": {str(n): reports[n].mode for n in nodes},
            "makespan_s": {t: {str(n): reports[n].task_summary(t)["makespan_s"] for n in nodes} for t in TASKS},
            "total_makespan_s": {str(n): reports[n].totals()["makespan_s"] for n in nodes},
        },
        out / "sweep.json",
    )
    for n, rep in reports.items():
        rep.save(out / f"run_n{n}.json")
    print(f"sweep written to {out}/sweep.csv")
    return EXIT_OK


def cmd_evaluate(args, root: Path) -> int:
    months, data_dir, dipole = None, args.data_dir, None
    if args.manifest:
        m = Manifest.load(root / args.manifest)
        months, data_dir, dipole = m.months, m.data_dir, m.dipole
    kwargs = {"model": dipole} if dipole is not None else {}
    metrics = evaluate(root, months=months, data_dir=data_dir, **kwargs)
    out = root / args.out
    _dump_json(metrics, out)
    print(f"{'band':10s} {'count':>8s} {'rms_pre':>10s} {'rms_post':>10s} {'rms_dhat_err':>12s}")
    for name, s in list(metrics["bands"].items()) + [("all", metrics["all"])]:
        fmt = lambda v: "-" if v is None else f"{v:.3f}"  # noqa: E731
        print(f"{name:10s} {s['count']:8d} {fmt(s['rms_pre']):>10s} {fmt(s['rms_post']):>10s} {fmt(s['rms_dhat_error']):>12s}")
    frac = metrics["finetune"]["fraction_improved"]
    if frac is not None:
        print(f"fine-tuned model beats global model on {frac:.0%} of months")
    print(f"metrics written to {out}")
    return EXIT_OK


def cmd_report(args, root: Path) -> int:
    if not args.reports:
        raise UsageError("report needs at least one run report")
    reports = [RunReport.load(root / p) for p in args.reports]
    labels = args.labels.split(",") if args.labels else [Path(p).stem for p in args.reports]
    if len(labels) != len(reports):
        raise UsageError("--labels needs one label per report")
    header, rows = comparison_rows(reports, labels)
    print(format_table(header, rows))
    if args.csv:
        out = root / args.csv
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(["" if v is None else v for v in r] for r in rows)
        print(f"table written to {out}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="magcal", description="Calibration workflow for platform magnetometer data.")
    p.add_argument("--workdir", default=".", help="root for every relative path (default: .)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic mission")
    g.add_argument("--config", help="TOML file of mission settings")
    g.add_argument("--out", default="raw", help="output directory (default: raw)")
    g.add_argument("--n-months", type=int)
    g.add_argument("--samples-per-day", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    g.add_argument("--manifest", help="also write a run manifest for the generated months")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="execute the workflow once")
    r.add_argument("manifest")
    r.add_argument("--nodes", type=int, help="simulated node count (default: manifest cluster)")
    r.add_argument("--mode", choices=("local", "replay"), default="local")
    r.add_argument("--trace", help="run report to replay")
    r.add_argument("--report", help="where to write the run report")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="makespans over several node counts")
    s.add_argument("manifest")
    s.add_argument("--nodes", default="1,2,4,6,8")
    s.add_argument("--all-local", action="store_true", help="execute every node count for real")
    s.add_argument("--trace", help="replay this report for every node count")
    s.add_argument("--out", default="reports/sweep")
    s.set_defaults(func=cmd_sweep)

    e = sub.add_parser("evaluate", help="residuals against synthetic ground truth")
    e.add_argument("--manifest", help="take months, data_dir and dipole from this manifest")
    e.add_argument("--data-dir", default="raw")
    e.add_argument("--out", default="reports/metrics.json")
    e.set_defaults(func=cmd_evaluate)

    t = sub.add_parser("report", help="side-by-side resource table of run reports")
    t.add_argument("reports", nargs="*")
    t.add_argument("--labels", help="comma-separated column labels")
    t.add_argument("--csv", help="also write the table as CSV")
    t.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    root = Path(args.workdir)
    try:
        return args.func(args, root)
    except WorkflowFailed as exc:
        report = getattr(exc, "report", None)
        if report is not None:
            path = report.save(root / "reports" / "failed_run.json")
            print(f"partial report written to {path}", file=sys.stderr)
        print(f"magcal: {exc}", file=sys.stderr)
        return EXIT_TASK_FAILED
    except (ValueError, FileNotFoundError, KeyError, tomllib.TOMLDecodeError) as exc:
        print(f"magcal: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
