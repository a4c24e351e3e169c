from __future__ import annotations

import pytest

from tracewatch.taskgen import gen_game24_instance, gen_maze_instance, gen_spatial_instance


@pytest.fixture
def maze_instance():
    return gen_maze_instance(11, 9, 9, "right_turns")


@pytest.fixture
def spatial_instance():
    return gen_spatial_instance(3, 5, "Q0")


@pytest.fixture
def game24_instance():
    return gen_game24_instance(7)


@pytest.fixture
def tmp_cwd(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def pytest_terminal_summary(terminalreporter):
    from _support import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
