"""Scenario definitions and prompt templating.

A scenario binds the pool dynamics to narrative framing (fishery, pasture,
pollution, trash), a locale, and prompt toggles. All prompt text lives in
locale packs on disk: YAML files holding the six template bodies for one
language. English ships with the package; other locales are drop-ins.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources
from pathlib import Path

import yaml

from .dynamics import Direction, DynamicsParams, ResourceState
from .errors import (
    ConfigurationError,
    LocalePackError,
    MissingPlaceholderError,
    TemplateResolutionError,
)

TEMPLATE_KEYS = (
    "systemIntro",
    "harvestInstruction",
    "universalizationHint",
    "announcement",
    "discussionInstruction",
    "cotSuffix",
)

DEFAULT_AGENT_NAMES = ("John", "Kate", "Jack", "Emma", "Luke")


class ScenarioName(Enum):
    FISHERY = "fishery"
    PASTURE = "pasture"
    POLLUTION = "pollution"
    TRASH = "trash"


@dataclass(frozen=True)
class PromptTemplate:
    key: str
    locale: str
    body: str


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything a run needs besides the agent roster."""

    name: ScenarioName = ScenarioName.FISHERY
    dynamics: DynamicsParams = field(default_factory=DynamicsParams)
    initial_amount: float = 100.0
    n_agents: int = 5
    agent_names: tuple[str, ...] = DEFAULT_AGENT_NAMES
    announcer_title: str = "Mayor"
    resource_noun: str = "tons of fish"
    action_verb: str = "caught"
    narrative: str = ""
    locale: str = "en"
    universalization: bool = False
    max_conversation_steps: int = 10
    cot_suffix: bool = True
    seed: int = 42
    runs: int = 3
    integer_harvest: bool = True
    loss_constant: float = 130.0
    # Only centralized public reporting is implemented; per-agent private
    # observation is rejected here rather than silently approximated.
    observation: str = "manager"

    def __post_init__(self):
        if self.observation != "manager":
            raise ConfigurationError(
                f"observation strategy {self.observation!r} is not supported; "
                "only 'manager' is implemented"
            )
        if len(self.agent_names) != self.n_agents:
            raise ConfigurationError(
                f"agent_names has {len(self.agent_names)} entries for "
                f"{self.n_agents} agents"
            )
        if self.name is ScenarioName.TRASH:
            if self.dynamics.direction is not Direction.REMOVE_BAD:
                raise ConfigurationError("trash scenario requires the removal direction")
        elif self.dynamics.direction is not Direction.HARVEST_GOOD:
            raise ConfigurationError(f"{self.name.value} scenario requires the harvest direction")
        if self.max_conversation_steps < 1:
            raise ConfigurationError("max_conversation_steps must be positive")
        if not 0 <= self.initial_amount <= self.dynamics.capacity:
            raise ConfigurationError("initial_amount must lie in [0, capacity]")


def format_quantity(x: float) -> str:
    """Whole quantities print without a decimal point (10, not 10.0)."""
    if float(x) == int(x):
        return str(int(x))
    return f"{x:g}"


class _StrictFormatter(string.Formatter):
    def __init__(self, template_key: str):
        super().__init__()
        self.template_key = template_key

    def get_value(self, key, args, kwargs):
        if isinstance(key, str) and key not in kwargs:
            raise MissingPlaceholderError(self.template_key, key)
        return super().get_value(key, args, kwargs)


def render_template(template: PromptTemplate, context: dict) -> str:
    """Substitute placeholders, failing loudly on any the context lacks."""
    return _StrictFormatter(template.key).vformat(template.body, (), context)


def load_locale_pack(path: str | Path) -> dict[str, PromptTemplate]:
    """Load one locale's templates from a YAML pack file.

    Validates completeness (all six keys) and placeholder syntax. Placeholder
    names are deliberately not checked against a whitelist here: a misspelled
    name loads fine and fails fast at the first render that hits it.
    """
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise LocalePackError(f"{path}: not valid YAML: {exc}") from exc
    if not isinstance(raw, dict) or "locale" not in raw or "templates" not in raw:
        raise LocalePackError(f"{path}: pack must define 'locale' and 'templates'")
    locale = str(raw["locale"])
    bodies = raw["templates"]
    missing = [k for k in TEMPLATE_KEYS if k not in bodies]
    if missing:
        raise LocalePackError(f"{path}: missing template keys: {', '.join(missing)}")
    pack = {}
    for key in TEMPLATE_KEYS:
        body = bodies[key]
        if not isinstance(body, str):
            raise LocalePackError(f"{path}: template {key!r} must be a string")
        try:
            list(string.Formatter().parse(body))
        except ValueError as exc:
            line = _placeholder_error_line(body)
            raise LocalePackError(
                f"{path}: template {key!r} has a malformed placeholder "
                f"near line {line}: {exc}"
            ) from exc
        pack[key] = PromptTemplate(key=key, locale=locale, body=body)
    return pack


def _placeholder_error_line(body: str) -> int:
    for lineno, line in enumerate(body.splitlines(), start=1):
        try:
            list(string.Formatter().parse(line))
        except ValueError:
            return lineno
    return 1


def builtin_locale_dir() -> Path:
    return Path(resources.files("commonsim") / "locales")


def load_templates(locale: str, extra_dirs: list[Path] | None = None) -> dict[str, PromptTemplate]:
    """Resolve a locale pack, searching extra directories before the packaged
    ones. A locale with no pack anywhere raises a resolution error naming the
    first template key, so the message pinpoints the missing pair."""
    search = list(extra_dirs or []) + [builtin_locale_dir()]
    for directory in search:
        candidate = Path(directory) / f"{locale}.yaml"
        if candidate.exists():
            return load_locale_pack(candidate)
    raise TemplateResolutionError(TEMPLATE_KEYS[0], locale)


def _base_context(cfg: ScenarioConfig, state: ResourceState) -> dict:
    from .dynamics import fair_share, sustainability_threshold

    threshold = sustainability_threshold(state, cfg.dynamics)
    share = fair_share(state, cfg.dynamics, cfg.n_agents)
    return {
        "amount": format_quantity(state.amount),
        "month": state.month + 1,
        "threshold": format_quantity(threshold),
        "fairShare": format_quantity(share),
        "nAgents": cfg.n_agents,
        "capacity": format_quantity(cfg.dynamics.capacity),
        "collapseThreshold": format_quantity(cfg.dynamics.collapse_threshold),
        "horizon": cfg.dynamics.horizon,
        "narrative": cfg.narrative,
        "announcerTitle": cfg.announcer_title,
        "resourceNoun": cfg.resource_noun,
        "actionVerb": cfg.action_verb,
    }


def _history_block(history: list[tuple[str, str]]) -> str:
    if not history:
        return "No public history yet: this is the first month."
    return "\n".join(f"{speaker}: {text}" for speaker, text in history)


def render_system_intro(cfg: ScenarioConfig, agent_name: str, pack: dict) -> str:
    ctx = {
        "agentName": agent_name,
        "nAgents": cfg.n_agents,
        "capacity": format_quantity(cfg.dynamics.capacity),
        "collapseThreshold": format_quantity(cfg.dynamics.collapse_threshold),
        "horizon": cfg.dynamics.horizon,
        "narrative": cfg.narrative,
        "announcerTitle": cfg.announcer_title,
        "resourceNoun": cfg.resource_noun,
        "actionVerb": cfg.action_verb,
    }
    return render_template(_get(pack, "systemIntro", cfg.locale), ctx)


def render_harvest_prompt(
    cfg: ScenarioConfig,
    agent_name: str,
    state: ResourceState,
    history: list[tuple[str, str]],
    pack: dict[str, PromptTemplate],
) -> str:
    """Full one-shot decision instruction for one agent: rules, current pool,
    prior public history, and the numeric ask. Appends the universalization
    hint and the chain-of-thought suffix when configured."""
    if state.collapsed:
        raise ValueError("cannot render a harvest prompt for a collapsed state")
    ctx = _base_context(cfg, state)
    ctx["agentName"] = agent_name
    ctx["history"] = _history_block(history)
    parts = [render_template(_get(pack, "harvestInstruction", cfg.locale), ctx)]
    if cfg.universalization:
        parts.append(render_template(_get(pack, "universalizationHint", cfg.locale), ctx))
    if cfg.cot_suffix:
        parts.append(render_template(_get(pack, "cotSuffix", cfg.locale), ctx))
    return "\n\n".join(parts)


def render_announcement(
    cfg: ScenarioConfig,
    month_report: list[tuple[str, float]],
    pack: dict[str, PromptTemplate],
    month: int = 1,
) -> str:
    """The announcer's public message listing every agent's action this month."""
    if not month_report:
        raise ConfigurationError("month_report must cover all agents")
    if len(month_report) != cfg.n_agents:
        raise ConfigurationError(
            f"month_report has {len(month_report)} entries for {cfg.n_agents} agents"
        )
    lines = " ".join(
        f"{name} {cfg.action_verb} {format_quantity(amount)} {cfg.resource_noun}."
        for name, amount in month_report
    )
    ctx = {
        "reportLines": lines,
        "month": month,
        "announcerTitle": cfg.announcer_title,
        "resourceNoun": cfg.resource_noun,
        "actionVerb": cfg.action_verb,
    }
    return render_template(_get(pack, "announcement", cfg.locale), ctx)


def render_discussion_prompt(
    cfg: ScenarioConfig,
    agent_name: str,
    state: ResourceState,
    announcement: str,
    turns: list[tuple[str, str]],
    pack: dict[str, PromptTemplate],
) -> str:
    ctx = _base_context(cfg, state)
    ctx["agentName"] = agent_name
    conversation = [(cfg.announcer_title, announcement)] + list(turns)
    ctx["history"] = _history_block(conversation)
    return render_template(_get(pack, "discussionInstruction", cfg.locale), ctx)


def _get(pack: dict[str, PromptTemplate], key: str, locale: str) -> PromptTemplate:
    if key not in pack:
        raise TemplateResolutionError(key, locale)
    return pack[key]


# --- scenario presets ---------------------------------------------------------

def builtin_preset_dir() -> Path:
    return Path(resources.files("commonsim") / "presets")


def load_scenario(source: str | Path) -> ScenarioConfig:
    """Build a config from a preset name (fishery, pasture, pollution, trash)
    or a path to a preset YAML file."""
    path = Path(source)
    if not path.exists():
        candidate = builtin_preset_dir() / f"{source}.yaml"
        if not candidate.exists():
            raise ConfigurationError(f"unknown scenario preset: {source}")
        path = candidate
    raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: preset must be a mapping")
    return scenario_from_dict(raw, origin=str(path))


def scenario_from_dict(raw: dict, origin: str = "<dict>") -> ScenarioConfig:
    try:
        name = ScenarioName(raw.get("name", "fishery"))
        direction = Direction(raw.get("direction", "harvest_good"))
        dynamics = DynamicsParams(
            capacity=float(raw.get("capacity", 100)),
            growth_factor=float(raw.get("growth_factor", 2)),
            collapse_threshold=float(raw.get("collapse_threshold", 5)),
            horizon=int(raw.get("horizon", 12)),
            direction=direction,
        )
        return ScenarioConfig(
            name=name,
            dynamics=dynamics,
            initial_amount=float(raw.get("initial_amount", dynamics.capacity)),
            n_agents=int(raw.get("n_agents", 5)),
            agent_names=tuple(raw.get("agent_names", DEFAULT_AGENT_NAMES)),
            announcer_title=str(raw.get("announcer_title", "Mayor")),
            resource_noun=str(raw.get("resource_noun", "tons of fish")),
            action_verb=str(raw.get("action_verb", "caught")),
            narrative=str(raw.get("narrative", "")),
            locale=str(raw.get("locale", "en")),
            universalization=bool(raw.get("universalization", False)),
            max_conversation_steps=int(raw.get("max_conversation_steps", 10)),
            cot_suffix=bool(raw.get("cot_suffix", True)),
            seed=int(raw.get("seed", 42)),
            runs=int(raw.get("runs", 3)),
            integer_harvest=bool(raw.get("integer_harvest", True)),
            loss_constant=float(raw.get("loss_constant", 130)),
            observation=str(raw.get("observation", "manager")),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigurationError(f"{origin}: {exc}") from exc


_DYNAMICS_KEYS = ("capacity", "growth_factor", "collapse_threshold", "horizon", "direction")


def with_overrides(cfg: ScenarioConfig, **kwargs) -> ScenarioConfig:
    """Copy a config with field overrides. Dynamics-level keys (capacity,
    growth_factor, collapse_threshold, horizon, direction) are accepted
    directly; shrinking or growing n_agents adjusts the name list to match
    unless agent_names is overridden too."""
    dyn_kwargs = {k: kwargs.pop(k) for k in list(kwargs) if k in _DYNAMICS_KEYS}
    if dyn_kwargs:
        kwargs["dynamics"] = replace(cfg.dynamics, **dyn_kwargs)
    if "n_agents" in kwargs and "agent_names" not in kwargs:
        n = kwargs["n_agents"]
        names = cfg.agent_names[:n]
        if len(names) < n:
            names = names + tuple(f"Agent{i + 1}" for i in range(len(names), n))
        kwargs["agent_names"] = names
    return replace(cfg, **kwargs)
