import time
from dataclasses import dataclass
from pathlib import Path

import pytest

from oilsent.report import cli

REPLAY_SEED = 7

# criterion number -> (passed, detail); filled by the acceptance tests
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@dataclass
class ReplayRun:
    first: Path
    second: Path
    summary: dict
    seconds: float


@pytest.fixture(scope="session")
def replay_run(tmp_path_factory) -> ReplayRun:
    def replay(out: Path) -> dict:
        args = cli.build_parser().parse_args(["replay", "--out", str(out),
                                              "--seed", str(REPLAY_SEED)])
        return cli.dispatch(args)

    first = tmp_path_factory.mktemp("replay_a")
    t0 = time.perf_counter()
    summary = replay(first)
    seconds = time.perf_counter() - t0
    second = tmp_path_factory.mktemp("replay_b")
    replay(second)
    return ReplayRun(first, second, summary, seconds)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
