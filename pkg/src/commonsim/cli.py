"""Operator entry point.

Exit codes are a stable contract: 0 success, 1 run failure, 2 configuration
error. Configuration problems print a single-line reason before any side
effect happens.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .agents import Human
from .dynamics import Direction
from .engine import (
    BatchResult,
    RunConfig,
    build_roster,
    parse_roster_spec,
    run_batch,
)
from .errors import CommonsimError, ConfigurationError, RunInterrupted, TemplateError
from .gateway import Cassette, CassetteMode, Gateway, default_registry
from .metrics import aggregate
from .report import (
    emit_table,
    load_run,
    persist_run,
    render_table_text,
    replay_transcript,
)
from .scenario import load_scenario, load_templates, with_overrides


def _add_common_flags(parser):
    parser.add_argument("--scenario", default="fishery",
                        help="preset name (fishery, pasture, pollution, trash) or preset file path")
    parser.add_argument("--roster", default=None,
                        help="roster spec, e.g. fairshare:5 or deepseek-v3:4,gpt-4o-mini:1")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--runs", type=int, default=None)
    parser.add_argument("--universalization", action="store_true")
    parser.add_argument("--locale", default=None)
    parser.add_argument("--cassette", default=None,
                        help="record:<path> or replay:<path>")
    parser.add_argument("--out", default="commonsim-out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="commonsim",
                                     description="Shared-resource governance simulation")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    for name, helptext in (
        ("run", "execute a single run"),
        ("batch", "execute several runs with derived seeds"),
        ("human", "interactive run with one human-controlled agent"),
        ("validate", "echo the fully-resolved configuration"),
        ("estimate-cost", "estimate API cost for the configured roster"),
    ):
        p = sub.add_parser(name, help=helptext)
        _add_common_flags(p)

    p = sub.add_parser("report", help="aggregate stored runs into a results table")
    p.add_argument("paths", nargs="+", help="record files or run directories")
    p.add_argument("--label", default=None)

    p = sub.add_parser("replay", help="print the transcript of a stored run")
    p.add_argument("path", help="record file or run directory")
    return parser


def _resolve_scenario(args):
    scenario = load_scenario(args.scenario)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.runs is not None:
        overrides["runs"] = args.runs
    if args.universalization:
        overrides["universalization"] = True
    if args.locale is not None:
        overrides["locale"] = args.locale
    if overrides:
        scenario = with_overrides(scenario, **overrides)
    return scenario


def _parse_cassette(arg):
    if arg is None:
        return None, CassetteMode.PASSTHROUGH
    mode, _, path = arg.partition(":")
    if mode == "record":
        return Path(path), CassetteMode.RECORD
    if mode == "replay":
        return Path(path), CassetteMode.REPLAY
    raise ConfigurationError(f"--cassette must be record:<path> or replay:<path>, got {arg!r}")


def _build_run_config(args, require_roster=True) -> RunConfig:
    scenario = _resolve_scenario(args)
    if args.roster is None:
        if require_roster:
            raise ConfigurationError("--roster is required")
        roster_spec = [("fairshare", scenario.n_agents)]
    else:
        roster_spec = parse_roster_spec(args.roster)
    roster = build_roster(roster_spec, scenario)
    cassette_path, cassette_mode = _parse_cassette(args.cassette)
    return RunConfig(
        scenario=scenario,
        agents=roster,
        seed=scenario.seed,
        cassette_path=cassette_path,
        cassette_mode=cassette_mode,
        output_dir=Path(args.out),
    )


def _make_gateway(cfg: RunConfig) -> Gateway:
    cassette = None
    if cfg.cassette_path is not None:
        cassette = Cassette(cfg.cassette_path, cfg.cassette_mode)
    return Gateway(cassette=cassette)


def _print_batch(result: BatchResult, out_dir: Path, label: str) -> int:
    for record in result.records:
        manifest = persist_run(record, out_dir / f"run-{record.seed}")
        for name in sorted(manifest["files"]) + ["manifest.json"]:
            print(f"wrote {out_dir / f'run-{record.seed}' / name}")
    if result.records:
        table = emit_table([(label, aggregate(result.records))])
        print(render_table_text(table), end="")
    for seed, reason in result.failures:
        print(f"run with seed {seed} failed: {reason}", file=sys.stderr)
    return 1 if result.failures else 0


def cmd_run(args) -> int:
    cfg = _build_run_config(args)
    runs = 1 if args.subcommand == "run" else (args.runs or cfg.scenario.runs)
    gateway = _make_gateway(cfg)
    result = run_batch(
        RunConfig(scenario=cfg.scenario, agents=cfg.agents, seed=cfg.scenario.seed,
                  output_dir=None),
        runs,
        gateway=gateway,
    )
    label = args.roster or "fairshare"
    return _print_batch(result, Path(args.out), label)


def cmd_human(args) -> int:
    cfg = _build_run_config(args)
    humans = sum(1 for a in cfg.agents if isinstance(a.kind, Human))
    if humans != 1:
        raise ConfigurationError(f"human mode needs exactly one human roster slot, got {humans}")
    from .engine import run_simulation

    gateway = _make_gateway(cfg)
    try:
        record = run_simulation(cfg, gateway=gateway)
    except RunInterrupted as exc:
        print(f"session aborted: {exc}", file=sys.stderr)
        return 1
    table = emit_table([(args.roster, aggregate([record]))])
    print(render_table_text(table), end="")
    return 0


def cmd_validate(args) -> int:
    scenario = _resolve_scenario(args)
    dyn = scenario.dynamics
    print(
        f"agents={scenario.n_agents} growth={dyn.growth_factor:g} "
        f"collapse={dyn.collapse_threshold:g} initial={scenario.initial_amount:g} "
        f"horizon={dyn.horizon} maxConversationSteps={scenario.max_conversation_steps} "
        f"seed={scenario.seed}"
    )
    print(
        f"scenario={scenario.name.value} direction={dyn.direction.value} "
        f"capacity={dyn.capacity:g} locale={scenario.locale} "
        f"universalization={scenario.universalization} cotSuffix={scenario.cot_suffix} "
        f"runs={scenario.runs}"
    )
    load_templates(scenario.locale)
    print(f"locale pack {scenario.locale!r}: complete")
    if args.roster is not None:
        roster = build_roster(parse_roster_spec(args.roster), scenario)
        print("roster: " + ", ".join(f"{a.name}={_kind_label(a)}" for a in roster))
    return 0


def _kind_label(agent) -> str:
    from .engine import describe_agent

    return describe_agent(agent)


def cmd_estimate_cost(args) -> int:
    scenario = _resolve_scenario(args)
    registry = default_registry()
    gateway = Gateway(registry=registry)
    months = scenario.dynamics.horizon
    if args.roster:
        tokens = [token for token, _ in parse_roster_spec(args.roster)]
    else:
        tokens = sorted(registry)
    for token in tokens:
        if token not in registry:
            print(f"{token}: not an API model, no cost")
            continue
        estimate = gateway.estimate_run_cost(token, months)
        if estimate is None:
            print(f"{token}: estimate unavailable (no pricing configured)")
        else:
            print(f"{token}: ${estimate:.2f} estimated for {months} months")
    return 0


def _collect_records(paths):
    records = []
    for raw in paths:
        path = Path(raw)
        if path.is_dir():
            candidates = sorted(path.rglob("record.jsonl"))
            if not candidates:
                raise ConfigurationError(f"no record.jsonl under {path}")
            records.extend(load_run(c) for c in candidates)
        else:
            records.append(load_run(path))
    return records


def cmd_report(args) -> int:
    records = _collect_records(args.paths)
    label = args.label or records[0].roster[0]
    table = emit_table([(label, aggregate(records))])
    print(render_table_text(table), end="")
    return 0


def cmd_replay(args) -> int:
    path = Path(args.path)
    if path.is_dir():
        path = path / "record.jsonl"
    print(replay_transcript(path), end="")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": cmd_run,
        "batch": cmd_run,
        "human": cmd_human,
        "validate": cmd_validate,
        "estimate-cost": cmd_estimate_cost,
        "report": cmd_report,
        "replay": cmd_replay,
    }
    try:
        return handlers[args.subcommand](args)
    except (ConfigurationError, TemplateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RunInterrupted as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except CommonsimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
