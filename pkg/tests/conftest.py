from __future__ import annotations

import json
from pathlib import Path

import pytest

from forgeline.clock import FixedClock
from forgeline.workspace import Workspace

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures() -> Path:
    return FIXTURES


@pytest.fixture
def fixed_clock() -> FixedClock:
    return FixedClock(1_700_000_000.0)


@pytest.fixture
def workspace(tmp_path, fixed_clock) -> Workspace:
    return Workspace(tmp_path / "ws", clock=fixed_clock)


def load_design(name: str) -> dict:
    return json.loads((FIXTURES / "designs" / name).read_text(encoding="utf-8"))


def all_design_fixtures() -> list[str]:
    return sorted(p.name for p in (FIXTURES / "designs").iterdir() if p.suffix == ".json")
