import numpy as np
import pytest

from banditforge.core.rng import Rng
from banditforge.envs.synthetic import ScbSpec, init_genome, save_checkpoint


@pytest.fixture
def cartpole_cb(tmp_path):
    """A random bandit-mode CartPole checkpoint on disk."""
    spec = ScbSpec("CartPole-v1", "CB", "gaussian")
    genome = init_genome(spec, Rng(7))
    path = tmp_path / "cartpole.ckpt"
    save_checkpoint(path, spec, genome, generation=0)
    return path, spec, genome


@pytest.fixture
def pendulum_cb():
    spec = ScbSpec("Pendulum-v1", "CB", "gaussian")
    return spec, init_genome(spec, Rng(11))


_criteria: dict[str, str] = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if not name.startswith("test_criterion_"):
        return
    key = name.split("_")[2]
    if report.when == "call" or report.outcome != "passed":
        prev = _criteria.get(key, "PASS")
        _criteria[key] = "PASS" if prev == "PASS" and report.outcome == "passed" else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_criteria, key=int):
        terminalreporter.write_line(f"criterion {key}: {_criteria[key]}")
