"""Command line: plan, simulate, train, compare and report."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from ferret.analytics import ConfigError
from ferret.experiment import (
    ExperimentConfig,
    ExperimentError,
    InfeasibleBudget,
    build_profile,
    dump_json,
    level_budget,
    load_config,
    make_plan,
    parse_budget,
    plan_to_dict,
    read_plan,
    run_method,
    stream_spec,
)
from ferret.metrics import RecordError, gain_table, mean_stderr, read_results, write_results
from ferret.profile import ProfileError, stage_stats
from ferret.sim import simulate, summary, write_summary, write_trace
from ferret.stream import StreamError

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 2, 3

log = logging.getLogger("ferret")


def _seeds(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(s) for s in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be integers, got {text!r}") from None


def _common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", required=config_required, help="ferret-config v1 JSON file")
    p.add_argument("--budget", help="memory budget as a count, or 'inf'")
    p.add_argument("--seed", type=_seeds, help="seed list, e.g. '0,1,2'")
    p.add_argument("--out", default=".", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ferret", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("plan", help="search a partition and pipeline config for a budget"))
    p = sub.add_parser("simulate", help="run a plan through the pipeline simulator")
    _common(p)
    p.add_argument("--plan", help="ferret-plan v1 file (default: plan from the config)")
    p.add_argument("--items", type=int, help="number of arrivals (default: config horizon)")
    _common(sub.add_parser("train", help="train the config's method once per seed"))
    _common(sub.add_parser("compare", help="train every configured method once per seed"))
    p = sub.add_parser("report", help="agm/tagm table from results files")
    _common(p, config_required=False)
    p.add_argument("records", nargs="+", help="results files")
    p.add_argument("--baseline", help="baseline method (default: config baseline or one_skip)")
    return parser


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.budget is not None:
        cfg.budget = parse_budget(args.budget)
    if args.seed:
        cfg.seeds = args.seed
    cfg.validate()
    return cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_plan(args) -> int:
    cfg = _load(args)
    profile = build_profile(cfg)
    res = make_plan(cfg, profile, cfg.budget)
    out = _out(args)
    dump_json(plan_to_dict(res, cfg, profile, cfg.budget), out / "plan.json")
    active = len(res.C.active_workers)
    print(f"partition: {list(res.L.bounds)} ({res.L.n_stages} stages, stage bound {res.t_c:.6g})")
    print(f"workers: {active} active of {len(res.C.workers)}, modulus {res.C.modulus}")
    for n, w in enumerate(res.C.workers):
        state = f"delay {w.c_d}" if w.active else "removed"
        print(f"  worker {n}: {state}, recompute {w.c_r}, accumulate {list(w.c_a)}, omit {list(w.c_o)}")
    print(f"predicted rate: {res.rate:.6g}")
    print(f"predicted memory: {res.memory}")
    print(f"wrote {out / 'plan.json'}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load(args)
    profile = build_profile(cfg)
    if args.plan:
        loaded = read_plan(args.plan)
        if loaded.n_layers != len(profile) or loaded.L.bounds[-1] != len(profile):
            raise ExperimentError(
                f"plan covers {loaded.L.bounds[-1]} layers but the profile has {len(profile)}"
            )
        L, C, t_d, predicted = loaded.L, loaded.C, loaded.t_d, loaded.memory
    else:
        res = make_plan(cfg, profile, cfg.budget)
        L, C, t_d, predicted = res.L, res.C, stream_spec(cfg, profile).t_d, res.memory
    stats = stage_stats(profile, L)
    s = stream_spec(cfg, profile)
    n_items = args.items if args.items is not None else int(cfg.horizon)
    trace = simulate(stats, C, type(s)(t_d, c=s.c, V_D=s.V_D), n_items)
    out = _out(args)
    write_trace(trace, out / "trace.txt")
    write_summary(trace, out / "summary.json")
    info = summary(trace)
    print(f"items: {n_items}, dropped: {len(trace.dropped)}, updates: {info['n_updates']}")
    print(f"peak memory: {trace.peak_memory} (predicted {predicted})")
    print(f"realized value: {trace.realized:.6g}")
    print(f"wrote {out / 'trace.txt'} and {out / 'summary.json'}")
    return EXIT_OK


def _run_matrix(cfg: ExperimentConfig, methods) -> list:
    records = []
    for method in methods:
        for seed in cfg.seeds:
            log.info("running %s seed %d", method, seed)
            records.append(run_method(cfg, method, seed))
    return records


def _print_means(records) -> None:
    by_method: dict[str, list] = {}
    for r in records:
        by_method.setdefault(r.method, []).append(r)
    for method, rs in by_method.items():
        o, oe = mean_stderr([r.oacc for r in rs])
        t, te = mean_stderr([r.tacc for r in rs])
        print(f"{method:>10}: oacc {o:6.2f} ± {oe:.2f}  tacc {t:6.2f} ± {te:.2f}  memory {rs[0].memory}")


def _rows(records) -> list[dict]:
    return [{"setting": r.setting, "method": r.method, "oacc": r.oacc, "tacc": r.tacc,
             "memory": r.memory, "agm": "", "tagm": "", "seed": r.seed} for r in records]


def cmd_train(args) -> int:
    cfg = _load(args)
    records = _run_matrix(cfg, [cfg.method])
    out = _out(args)
    write_results(_rows(records), out / "records.csv")
    _print_means(records)
    print(f"wrote {out / 'records.csv'}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _load(args)
    records = _run_matrix(cfg, cfg.methods)
    out = _out(args)
    write_results(_rows(records), out / "records.csv")
    if cfg.baseline in cfg.methods:
        write_results(gain_table(records, cfg.baseline), out / "results.csv")
    _print_means(records)
    print(f"wrote {out / 'records.csv'}")
    return EXIT_OK


def cmd_report(args) -> int:
    baseline = args.baseline
    if baseline is None:
        baseline = load_config(args.config).baseline if args.config else "one_skip"
    records = []
    for path in args.records:
        records.extend(read_results(path))
    rows = gain_table(records, baseline)
    out = _out(args)
    write_results(rows, out / "report.csv")
    print(f"{'setting':>10} {'method':>10} {'seed':>4} {'oacc':>7} {'tacc':>7} {'memory':>9} {'agm':>8} {'tagm':>8}")
    for r in rows:
        print(f"{r['setting']:>10} {r['method']:>10} {r['seed']:>4} {r['oacc']:7.2f} {r['tacc']:7.2f} "
              f"{r['memory']:>9} {r['agm']:8.3f} {r['tagm']:8.3f}")
    print(f"wrote {out / 'report.csv'}")
    return EXIT_OK


COMMANDS = {
    "plan": cmd_plan,
    "simulate": cmd_simulate,
    "train": cmd_train,
    "compare": cmd_compare,
    "report": cmd_report,
}


def main(argv=None) -> int:
    level = os.environ.get("FERRET_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except InfeasibleBudget as exc:
        print(f"error: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ExperimentError, ConfigError, ProfileError, StreamError, RecordError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
