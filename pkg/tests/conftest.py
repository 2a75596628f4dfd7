import pytest

from commonsim.engine import RunConfig, build_roster
from commonsim.scenario import load_scenario


@pytest.fixture
def fishery():
    return load_scenario("fishery")


@pytest.fixture
def trash():
    return load_scenario("trash")


@pytest.fixture
def fairshare_run(fishery):
    roster = build_roster([("fairshare", 5)], fishery)
    return RunConfig(scenario=fishery, agents=roster)


@pytest.fixture
def greedy_run(fishery):
    roster = build_roster([("greedy20", 5)], fishery)
    return RunConfig(scenario=fishery, agents=roster)


class ScriptedTransport:
    """Transport stub returning canned completion texts in order. Any call
    past the end of the script fails the test loudly."""

    def __init__(self, responses, prompt_tokens=100, completion_tokens=25):
        self.responses = list(responses)
        self.prompt_tokens = prompt_tokens
        self.completion_tokens = completion_tokens
        self.calls = 0

    def __call__(self, url, headers, payload, timeout):
        assert self.responses, "transport script exhausted"
        self.calls += 1
        text = self.responses.pop(0)
        return 200, {
            "choices": [{"message": {"content": text}}],
            "usage": {
                "prompt_tokens": self.prompt_tokens,
                "completion_tokens": self.completion_tokens,
            },
        }


class ForbiddenTransport:
    """Transport that fails the test if any live call is attempted."""

    def __call__(self, url, headers, payload, timeout):
        raise AssertionError("live network call attempted")


@pytest.fixture
def scripted_transport():
    return ScriptedTransport


@pytest.fixture
def forbidden_transport():
    return ForbiddenTransport()
