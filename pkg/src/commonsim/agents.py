"""Agent abstraction: scripted policies for oracles and tests, LLM-backed
agents that assemble prompts and parse decisions, and an interactive human
agent for hybrid sessions."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .dynamics import ResourceState, fair_share
from .errors import ConfigurationError, ParseFailure
from .scenario import (
    ScenarioConfig,
    format_quantity,
    render_discussion_prompt,
    render_harvest_prompt,
    render_system_intro,
)

PASS_TOKEN = "<pass>"
PARSE_RETRIES = 2
RETRY_INSTRUCTION = "Please answer with a single number."


@dataclass(frozen=True)
class Scripted:
    policy_id: str
    params: tuple[tuple[str, float], ...] = ()

    def param(self, name: str, default: float) -> float:
        return dict(self.params).get(name, default)


@dataclass(frozen=True)
class LlmBacked:
    model_key: str


@dataclass(frozen=True)
class Human:
    pass


@dataclass(frozen=True)
class Programmed:
    """Arbitrary deterministic policy, used by tests to probe what an agent
    can observe. fn(state, scenario, history) -> requested quantity."""

    fn: object
    label: str = "probe"


@dataclass(frozen=True)
class AgentSpec:
    index: int
    name: str
    kind: Scripted | LlmBacked | Human
    locale: str = "en"
    universalization: bool = False


@dataclass(frozen=True)
class HarvestDecision:
    agent_index: int
    requested: float
    raw_text: str | None = None
    flagged: bool = False


@dataclass(frozen=True)
class Utterance:
    agent_index: int
    text: str
    passed: bool = False

    def __post_init__(self):
        if self.passed and self.text:
            raise ValueError("a pass carries no text")


SCRIPTED_POLICY_IDS = ("fairshare", "greedy", "propgreedy", "zero", "titfortat", "talker")


def decide_scripted(
    policy: Scripted,
    state: ResourceState,
    cfg: ScenarioConfig,
    history,
) -> float:
    """Deterministic request for one of the built-in policies. `history` is
    the list of completed month records (each exposing .requests and
    .fair_share)."""
    share = fair_share(state, cfg.dynamics, cfg.n_agents)
    pid = policy.policy_id
    if pid in ("fairshare", "talker"):
        return share
    if pid == "greedy":
        return policy.param("k", 20.0)
    if pid == "propgreedy":
        return policy.param("p", 0.5) * state.amount / cfg.n_agents
    if pid == "zero":
        return 0.0
    if pid == "titfortat":
        if history:
            last = history[-1]
            if any(r > last.fair_share for r in last.requests):
                return policy.param("k", 20.0)
        return share
    raise ConfigurationError(f"unknown scripted policy: {pid}")


_STANDALONE_NUMBER = re.compile(r"(?<![\w.\-])(\d+(?:\.\d+)?)(?![\w.])")
_FINAL_ANSWER = re.compile(r"final answer[^\d\-]{0,20}(\d+(?:\.\d+)?)", re.IGNORECASE)
_ANSWER_TAG = re.compile(r"<answer>\s*(\d+(?:\.\d+)?)\s*</answer>", re.IGNORECASE)
_WITH_UNIT = re.compile(r"(\d+(?:\.\d+)?)\s*(?:tons?|units?)\b", re.IGNORECASE)


def parse_quantity(text: str, capacity: float = 100.0) -> float:
    """Extract the numeric decision from a completion.

    Priority: a number after an explicit answer marker ("final answer", an
    <answer> tag, or the last line naming an amount with its unit), otherwise
    the last standalone nonnegative number. Negative numbers never match and
    values above 10x capacity are rejected as implausible.
    """
    candidate = None
    markers = _FINAL_ANSWER.findall(text)
    if markers:
        candidate = markers[-1]
    if candidate is None:
        tags = _ANSWER_TAG.findall(text)
        if tags:
            candidate = tags[-1]
    if candidate is None:
        for line in reversed(text.splitlines()):
            with_unit = _WITH_UNIT.findall(line)
            if with_unit:
                candidate = with_unit[-1]
                break
    if candidate is None:
        numbers = _STANDALONE_NUMBER.findall(text)
        if numbers:
            candidate = numbers[-1]
    if candidate is None:
        raise ParseFailure("no numeric decision found in completion")
    value = float(candidate)
    if value > 10 * capacity:
        raise ParseFailure(f"implausible quantity {value} (> 10 x capacity)")
    return value


def _chat_messages(intro: str, prompt: str) -> list[dict]:
    return [
        {"role": "system", "content": intro},
        {"role": "user", "content": prompt},
    ]


def decide_llm(
    agent: AgentSpec,
    state: ResourceState,
    cfg: ScenarioConfig,
    history: list[tuple[str, str]],
    gateway,
    pack,
) -> HarvestDecision:
    """One-shot numeric decision from the model behind this agent. On parse
    failure the model is re-asked up to twice with an explicit single-number
    instruction; if that also fails the decision defaults to 0 and is flagged
    so the event is visible in the transcript."""
    assert isinstance(agent.kind, LlmBacked)
    agent_cfg = _agent_view(cfg, agent)
    intro = render_system_intro(agent_cfg, agent.name, pack)
    prompt = render_harvest_prompt(agent_cfg, agent.name, state, history, pack)
    messages = _chat_messages(intro, prompt)
    raw = ""
    for attempt in range(1 + PARSE_RETRIES):
        text, _usage = gateway.complete(agent.kind.model_key, messages)
        raw = text
        try:
            value = parse_quantity(text, cfg.dynamics.capacity)
        except ParseFailure:
            messages = messages + [
                {"role": "assistant", "content": text},
                {"role": "user", "content": RETRY_INSTRUCTION},
            ]
            continue
        return HarvestDecision(agent.index, value, raw_text=raw)
    return HarvestDecision(agent.index, 0.0, raw_text=raw, flagged=True)


def speak(
    agent: AgentSpec,
    state: ResourceState,
    cfg: ScenarioConfig,
    announcement: str,
    turns: list[tuple[str, str]],
    gateway,
    pack,
    input_fn=None,
) -> Utterance:
    """One discussion turn. Scripted agents pass by default; the talker policy
    emits a canned sustainability proposal so conversation plumbing can be
    exercised without a model."""
    if isinstance(agent.kind, Scripted):
        if agent.kind.policy_id == "talker":
            share = fair_share(state, cfg.dynamics, cfg.n_agents)
            text = (
                f"I suggest we each stick to {format_quantity(share)} "
                f"{cfg.resource_noun} this month so the pool stays healthy."
            )
            return Utterance(agent.index, text)
        return Utterance(agent.index, "", passed=True)
    if isinstance(agent.kind, Human):
        line = _read_human_line(
            input_fn, f"[{agent.name}] say something (or {PASS_TOKEN}): "
        )
        if line.strip().lower() == PASS_TOKEN:
            return Utterance(agent.index, "", passed=True)
        return Utterance(agent.index, line.strip())

    if isinstance(agent.kind, LlmBacked):
        agent_cfg = _agent_view(cfg, agent)
        intro = render_system_intro(agent_cfg, agent.name, pack)
        prompt = render_discussion_prompt(agent_cfg, agent.name, state, announcement, turns, pack)
        text, _usage = gateway.complete(agent.kind.model_key, _chat_messages(intro, prompt))
        if text.strip().lower() == PASS_TOKEN:
            return Utterance(agent.index, "", passed=True)
        return Utterance(agent.index, text.strip())
    return Utterance(agent.index, "", passed=True)


def decide_human(
    agent: AgentSpec,
    state: ResourceState,
    cfg: ScenarioConfig,
    input_fn,
) -> HarvestDecision:
    """Prompt a person for a number, re-asking until it parses and is in
    range. EOF propagates to the engine, which checkpoints and aborts."""
    share = fair_share(state, cfg.dynamics, cfg.n_agents)
    while True:
        line = _read_human_line(
            input_fn,
            f"[{agent.name}] month {state.month + 1}, pool {format_quantity(state.amount)} "
            f"{cfg.resource_noun} (sustainable share {format_quantity(share)}): ",
        )
        try:
            value = parse_quantity(line, cfg.dynamics.capacity)
        except ParseFailure:
            print("Please enter a nonnegative number.")
            continue
        return HarvestDecision(agent.index, value, raw_text=line)


def _read_human_line(input_fn, prompt: str) -> str:
    fn = input_fn or input
    return fn(prompt)


def _agent_view(cfg: ScenarioConfig, agent: AgentSpec) -> ScenarioConfig:
    """Per-agent overrides: locale and the universalization flag may differ
    from the scenario defaults in heterogeneous rosters."""
    from dataclasses import replace

    out = cfg
    if agent.locale != cfg.locale:
        out = replace(out, locale=agent.locale)
    if agent.universalization != cfg.universalization:
        out = replace(out, universalization=agent.universalization)
    return out
