"""Deterministic common-pool-resource governance simulation.

Agents (scripted policies or chat-model-backed via any OpenAI-compatible
endpoint) repeatedly act on a shared regrowing pool, discuss publicly, and
are scored on survival, gain, efficiency, equality, and over-usage.
"""

from .agents import (
    AgentSpec,
    HarvestDecision,
    Human,
    LlmBacked,
    Scripted,
    Utterance,
    parse_quantity,
)
from .dynamics import (
    AllocationResult,
    Direction,
    DynamicsParams,
    ResourceState,
    allocate,
    check_collapse,
    fair_share,
    regrow,
    sustainability_threshold,
)
from .engine import (
    BatchResult,
    MonthRecord,
    RunConfig,
    RunRecord,
    build_roster,
    parse_roster_spec,
    run_batch,
    run_simulation,
)
from .gateway import (
    Cassette,
    CassetteMode,
    Gateway,
    ModelRegistryEntry,
    UsageMeter,
    default_registry,
)
from .metrics import (
    MetricsSummary,
    aggregate,
    efficiency,
    equality,
    over_usage,
    survival_time,
    total_gain,
    total_loss,
)
from .report import emit_table, load_run, persist_run, replay_transcript
from .scenario import (
    PromptTemplate,
    ScenarioConfig,
    ScenarioName,
    load_locale_pack,
    load_scenario,
    load_templates,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
