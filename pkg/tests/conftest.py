from __future__ import annotations

import numpy as np
import pytest
import torch

from accent_vits.config import ModelConfig
from accent_vits.toy import write_corpus
from accent_vits.training import load_manifest, load_utterance

_ACCEPTANCE: list[tuple[str, str, str]] = []
_SETUP_TIME: dict[str, float] = {}


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    registry, manifest = write_corpus(root)
    return root, registry, manifest


@pytest.fixture(scope="session")
def toy_utts(toy_corpus):
    _, registry, manifest = toy_corpus
    return [load_utterance(r, registry) for r in load_manifest(manifest, registry)]


@pytest.fixture
def registry(toy_corpus):
    return toy_corpus[1]


def toy_model_config(registry, **kw) -> ModelConfig:
    return ModelConfig.toy(n_symbols=registry.n_symbols, n_speakers=2, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "setup":
        _SETUP_TIME[report.nodeid] = report.duration  # module fixtures (the overfit run) land here
    # a fixture error surfaces in setup and the call phase never runs
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    name = report.nodeid.split("::")[-1]
    if not name.startswith("test_ac"):
        return
    total = report.duration + (_SETUP_TIME.get(report.nodeid, 0.0) if report.when == "call" else 0.0)
    _ACCEPTANCE.append((name, report.outcome, f"{total:.1f}s"))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, dur in _ACCEPTANCE:
        mark = {"passed": "PASS", "skipped": "SKIP"}.get(outcome, "FAIL")
        terminalreporter.write_line(f"[{mark}] {name} ({dur})")
