"""Simulation orchestrator.

One engine run owns a single mutable pool state and walks it through the
monthly cycle: private concurrent submissions, allocation, collapse check,
public announcement, bounded round-robin discussion, regrowth, second
collapse check. All randomness flows from the run seed, so identical
configurations (with a replay cassette, when models are involved) produce
byte-identical records.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import agents as agents_mod
from .agents import AgentSpec, HarvestDecision, Human, LlmBacked, Scripted, Utterance
from .dynamics import (
    AllocationResult,
    Direction,
    ResourceState,
    advance_month,
    allocate,
    check_collapse,
    fair_share,
    regrow,
)
from .errors import ConfigurationError, RunInterrupted, TransportError
from .gateway import Cassette, CassetteMode, Gateway
from .scenario import ScenarioConfig, load_templates

import random


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioConfig
    agents: tuple[AgentSpec, ...]
    seed: int = 42
    cassette_path: Path | None = None
    cassette_mode: CassetteMode = CassetteMode.PASSTHROUGH
    output_dir: Path | None = None

    def __post_init__(self):
        if len(self.agents) != self.scenario.n_agents:
            raise ConfigurationError(
                f"roster has {len(self.agents)} agents but the scenario "
                f"expects {self.scenario.n_agents}"
            )


@dataclass(frozen=True)
class MonthRecord:
    month: int
    amount_start: float
    fair_share: float
    requests: tuple[float, ...]
    allocation: AllocationResult
    amount_after_harvest: float
    amount_after_regrowth: float
    announcement: str
    discussion: tuple[Utterance, ...]
    collapsed_during: bool
    flagged_agents: tuple[int, ...] = ()


@dataclass(frozen=True)
class RunRecord:
    scenario: ScenarioConfig
    roster: tuple[str, ...]
    seed: int
    months: tuple[MonthRecord, ...]
    survival_months: int
    per_agent_totals: tuple[float, ...]
    usage: dict = field(default_factory=dict)


def describe_agent(agent: AgentSpec) -> str:
    kind = agent.kind
    if isinstance(kind, Scripted):
        params = ",".join(f"{k}={v:g}" for k, v in kind.params)
        return f"scripted:{kind.policy_id}" + (f"({params})" if params else "")
    if isinstance(kind, LlmBacked):
        return f"llm:{kind.model_key}"
    if isinstance(kind, Human):
        return "human"
    return f"programmed:{getattr(kind, 'label', '?')}"


def _survival_months(scenario: ScenarioConfig, months: tuple[MonthRecord, ...]) -> int:
    if scenario.dynamics.direction is Direction.HARVEST_GOOD:
        for rec in months:
            if rec.collapsed_during:
                return max(1, rec.month)
        return scenario.dynamics.horizon
    return sum(1 for rec in months if rec.amount_after_regrowth < scenario.dynamics.capacity)


def _public_history(scenario: ScenarioConfig, agents, months) -> list[tuple[str, str]]:
    lines: list[tuple[str, str]] = []
    for rec in months:
        lines.append((scenario.announcer_title, rec.announcement))
        for utt in rec.discussion:
            if not utt.passed:
                lines.append((agents[utt.agent_index].name, utt.text))
    return lines


class _Checkpoint:
    """End-of-phase snapshot enabling resumption after a gateway failure."""

    @staticmethod
    def write(path: Path, cfg: RunConfig, months, state, rng, requests_consumed):
        from .report import month_to_dict  # serialization lives with the store

        payload = {
            "seed": cfg.seed,
            "months": [month_to_dict(m) for m in months],
            "state": {"amount": state.amount, "month": state.month, "collapsed": state.collapsed},
            "rng_state": _rng_state_to_json(rng.getstate()),
            "requests_consumed": requests_consumed,
        }
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")

    @staticmethod
    def load(path: Path):
        from .report import month_from_dict

        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        months = tuple(month_from_dict(d) for d in payload["months"])
        st = payload["state"]
        state = ResourceState(amount=st["amount"], month=st["month"], collapsed=st["collapsed"])
        return payload["seed"], months, state, _rng_state_from_json(payload["rng_state"]), payload[
            "requests_consumed"
        ]


def _rng_state_to_json(state):
    version, internal, gauss = state
    return [version, list(internal), gauss]


def _rng_state_from_json(data):
    version, internal, gauss = data
    return (version, tuple(internal), gauss)


def run_simulation(
    cfg: RunConfig,
    gateway: Gateway | None = None,
    template_dirs: list[Path] | None = None,
    input_fn=None,
    resume_from: Path | None = None,
) -> RunRecord:
    """Execute one full run and return its record. On a transport failure a
    checkpoint is written under the output directory (when configured) and a
    resumable interruption is raised."""
    scenario = cfg.scenario
    params = scenario.dynamics
    n = scenario.n_agents

    if gateway is None:
        cassette = None
        if cfg.cassette_path is not None:
            cassette = Cassette(cfg.cassette_path, cfg.cassette_mode)
        gateway = Gateway(cassette=cassette)

    needed_locales = {scenario.locale} | {a.locale for a in cfg.agents}
    packs = {loc: load_templates(loc, template_dirs) for loc in sorted(needed_locales)}

    rng = random.Random(cfg.seed)
    state = ResourceState(amount=scenario.initial_amount, month=0)
    months: tuple[MonthRecord, ...] = ()

    if resume_from is not None:
        saved_seed, months, state, rng_state, consumed = _Checkpoint.load(resume_from)
        if saved_seed != cfg.seed:
            raise ConfigurationError("checkpoint seed does not match the run config")
        rng.setstate(rng_state)
        if gateway.cassette is not None and gateway.cassette.mode is CassetteMode.REPLAY:
            gateway.cassette._cursor = consumed

    meter_base = gateway.meter.request_count
    cost_base = gateway.meter.estimated_cost_usd

    def _checkpoint_and_raise(exc: Exception) -> None:
        path = None
        if cfg.output_dir is not None:
            path = Path(cfg.output_dir) / "checkpoint.json"
            _Checkpoint.write(path, cfg, months, state, rng, gateway.meter.request_count)
        raise RunInterrupted(
            f"run interrupted in month {state.month + 1}: {exc}", checkpoint_path=path
        ) from exc

    usage_before = (gateway.meter.input_tokens, gateway.meter.output_tokens)

    while state.month < params.horizon and not state.collapsed:
        month_index = state.month + 1
        amount_start = state.amount
        share = fair_share(state, params, n)
        history = _public_history(scenario, cfg.agents, months)

        # Phase 1: private submissions. Collected in index order; no agent
        # sees another agent's pending request for the same month.
        requests: list[float] = []
        flagged: list[int] = []
        try:
            for agent in cfg.agents:
                decision = _decide(agent, state, scenario, months, history, gateway,
                                   packs, input_fn)
                if decision.flagged:
                    flagged.append(agent.index)
                req = decision.requested
                if scenario.integer_harvest:
                    req = float(int(req + 0.5))
                if req > params.capacity:
                    req = state.amount
                requests.append(req)
        except (TransportError, EOFError) as exc:
            _checkpoint_and_raise(exc)

        # Phase 2: simultaneous execution.
        alloc, state = allocate(requests, state, rng)
        amount_after_harvest = state.amount
        collapsed_after_harvest = check_collapse(state, params)

        # Phase 3: public announcement by the centralized observer.
        report = list(zip(scenario.agent_names, alloc.per_agent))
        from .scenario import render_announcement

        announcement = render_announcement(scenario, report, packs[scenario.locale],
                                           month=month_index)

        # Phase 4: bounded discussion (skipped once the pool has collapsed).
        discussion: tuple[Utterance, ...] = ()
        if not collapsed_after_harvest:
            try:
                discussion = _run_discussion(cfg, state, announcement, gateway, packs, input_fn)
            except (TransportError, EOFError) as exc:
                _checkpoint_and_raise(exc)

        # Phase 5: regrowth, then the second collapse check (the saturation
        # case for the removal direction).
        if not collapsed_after_harvest:
            state = regrow(state, params)
        amount_after_regrowth = state.amount
        collapsed_during = collapsed_after_harvest or check_collapse(state, params)

        state = advance_month(state, collapsed_during)
        months = months + (
            MonthRecord(
                month=month_index,
                amount_start=amount_start,
                fair_share=share,
                requests=tuple(requests),
                allocation=alloc,
                amount_after_harvest=amount_after_harvest,
                amount_after_regrowth=amount_after_regrowth,
                announcement=announcement,
                discussion=discussion,
                collapsed_during=collapsed_during,
                flagged_agents=tuple(flagged),
            ),
        )

    totals = tuple(
        sum(rec.allocation.per_agent[i] for rec in months) for i in range(n)
    )
    usage = {
        "input_tokens": gateway.meter.input_tokens - usage_before[0],
        "output_tokens": gateway.meter.output_tokens - usage_before[1],
        "request_count": gateway.meter.request_count - meter_base,
        "estimated_cost_usd": gateway.meter.estimated_cost_usd - cost_base,
    }

    record = RunRecord(
        scenario=scenario,
        roster=tuple(describe_agent(a) for a in cfg.agents),
        seed=cfg.seed,
        months=months,
        survival_months=_survival_months(scenario, months),
        per_agent_totals=totals,
        usage=usage,
    )
    if cfg.output_dir is not None:
        from .report import persist_run

        persist_run(record, cfg.output_dir)
    return record


def _decide(agent, state, scenario, months, history, gateway, packs, input_fn) -> HarvestDecision:
    kind = agent.kind
    if isinstance(kind, Scripted):
        value = agents_mod.decide_scripted(kind, state, scenario, months)
        return HarvestDecision(agent.index, value)
    if isinstance(kind, Human):
        return agents_mod.decide_human(agent, state, scenario, input_fn)
    if isinstance(kind, LlmBacked):
        return agents_mod.decide_llm(agent, state, scenario, history,
                                     gateway, packs[agent.locale])
    # Programmed policies (test probes) expose a plain callable.
    value = kind.fn(state, scenario, history)
    return HarvestDecision(agent.index, value)


def _run_discussion(cfg, state, announcement, gateway, packs, input_fn) -> tuple[Utterance, ...]:
    scenario = cfg.scenario
    n = scenario.n_agents
    turns: list[Utterance] = []
    spoken: list[tuple[str, str]] = []
    consecutive_passes = 0
    idx = 0
    while len(turns) < scenario.max_conversation_steps:
        agent = cfg.agents[idx % n]
        utt = agents_mod.speak(agent, state, scenario, announcement, spoken,
                               gateway, packs[agent.locale], input_fn)
        turns.append(utt)
        if utt.passed:
            consecutive_passes += 1
            if consecutive_passes >= n:
                break
        else:
            consecutive_passes = 0
            spoken.append((agent.name, utt.text))
        idx += 1
    return tuple(turns)


@dataclass
class BatchResult:
    records: list[RunRecord]
    failures: list[tuple[int, str]]  # (seed, reason)


def run_batch(
    cfg: RunConfig,
    runs: int,
    gateway: Gateway | None = None,
    template_dirs: list[Path] | None = None,
) -> BatchResult:
    """Execute `runs` independent runs with derived seeds seed+0..runs-1.
    Completed records are kept even when later seeds fail."""
    if runs < 1:
        raise ConfigurationError("runs must be >= 1")
    records: list[RunRecord] = []
    failures: list[tuple[int, str]] = []
    for k in range(runs):
        seed = cfg.seed + k
        sub = replace(cfg, seed=seed,
                      output_dir=None if cfg.output_dir is None
                      else Path(cfg.output_dir) / f"run-{seed}")
        try:
            records.append(run_simulation(sub, gateway=gateway, template_dirs=template_dirs))
        except Exception as exc:  # noqa: BLE001 - per-seed isolation is the contract
            failures.append((seed, str(exc)))
    return BatchResult(records=records, failures=failures)


_GREEDY_RE = re.compile(r"^greedy(\d+(?:\.\d+)?)?$")
_PROPGREEDY_RE = re.compile(r"^propgreedy(\d+(?:\.\d+)?)?$")


def resolve_roster_token(token: str, registry: dict) -> Scripted | LlmBacked | Human:
    token = token.strip().lower()
    if token in registry:
        return LlmBacked(model_key=token)
    if token == "human":
        return Human()
    if token in ("fairshare", "zero", "titfortat", "talker"):
        return Scripted(policy_id=token)
    m = _GREEDY_RE.match(token)
    if m:
        k = float(m.group(1)) if m.group(1) else 20.0
        return Scripted(policy_id="greedy", params=(("k", k),))
    m = _PROPGREEDY_RE.match(token)
    if m:
        p = float(m.group(1)) / 100.0 if m.group(1) else 0.5
        return Scripted(policy_id="propgreedy", params=(("p", p),))
    raise ConfigurationError(f"unknown roster entry: {token!r}")


def build_roster(
    spec: list[tuple[str, int]],
    scenario: ScenarioConfig,
    registry: dict | None = None,
) -> tuple[AgentSpec, ...]:
    """Expand (token, count) groups into a concrete roster. Groups keep their
    specification order and names come from the scenario's name list."""
    if registry is None:
        from .gateway import default_registry

        registry = default_registry()
    total = sum(count for _, count in spec)
    if total != scenario.n_agents:
        raise ConfigurationError(
            f"roster counts sum to {total} but the scenario has {scenario.n_agents} agents"
        )
    roster = []
    index = 0
    for token, count in spec:
        if count < 1:
            raise ConfigurationError(f"roster count for {token!r} must be positive")
        kind = resolve_roster_token(token, registry)
        for _ in range(count):
            roster.append(
                AgentSpec(
                    index=index,
                    name=scenario.agent_names[index],
                    kind=kind,
                    locale=scenario.locale,
                    universalization=scenario.universalization,
                )
            )
            index += 1
    return tuple(roster)


def parse_roster_spec(text: str) -> list[tuple[str, int]]:
    """Parse the CLI roster grammar `name:count,name:count`."""
    groups = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            token, _, count_text = part.rpartition(":")
            try:
                count = int(count_text)
            except ValueError as exc:
                raise ConfigurationError(f"bad roster count in {part!r}") from exc
        else:
            token, count = part, 1
        groups.append((token, count))
    if not groups:
        raise ConfigurationError("empty roster spec")
    return groups
