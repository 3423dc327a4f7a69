import json
import os
import tempfile

import pytest

os.environ.setdefault("MEMLQR_LOG_DIR", tempfile.mkdtemp(prefix="memlqr-logs-"))

from src.memlqr.models.settings import RunSettings  # noqa: E402
from src.memlqr.solver.builders import build_heat_system, build_random_stable  # noqa: E402
from src.memlqr.solver.problem_manager import ProblemManager  # noqa: E402


def scalar_problem(kernel, N=200, **extra):
    data = {
        "n": 1,
        "m": 1,
        "A": [[0.0]],
        "B": [[1.0]],
        "Q": [[1.0]],
        "kernel": kernel,
        "T": 1.0,
        "N": N,
        "xi0": [1.0],
    }
    data.update(extra)
    return data


@pytest.fixture
def scalar_lqr_data():
    yield scalar_problem({"type": "zero"})


@pytest.fixture
def scalar_memory_data():
    yield scalar_problem({"type": "constant", "c": -1.0})


@pytest.fixture
def history_data():
    yield scalar_problem(
        {"type": "constant", "c": -1.0},
        N=40,
        tau=0.25,
        history={"type": "constant", "value": [1.0]},
    )


@pytest.fixture
def jump_data():
    # xi0 = 1 after a zero history, so the memory path jumps at tau
    yield scalar_problem(
        {"type": "constant", "c": -1.0},
        N=40,
        tau=0.25,
        history={"type": "constant", "value": [0.0]},
    )


@pytest.fixture
def problem_manager():
    return ProblemManager()


@pytest.fixture
def scalar_lqr(problem_manager, scalar_lqr_data):
    return problem_manager.parse(scalar_lqr_data)


@pytest.fixture
def scalar_memory(problem_manager, scalar_memory_data):
    return problem_manager.parse(scalar_memory_data)


@pytest.fixture
def history_instance(problem_manager, history_data):
    return problem_manager.parse(history_data)


@pytest.fixture
def jump_instance(problem_manager, jump_data):
    return problem_manager.parse(jump_data)


@pytest.fixture
def heat_instance():
    return build_heat_system(n_space=9, nu=0.1, gamma=1.0, c=-0.5, T=1.0, N=100)


@pytest.fixture
def random_instance():
    return build_random_stable(n=2, m=1, seed=3, N=40)


@pytest.fixture
def settings(temp_output_dir):
    return RunSettings(out_dir=temp_output_dir, timing=False)


@pytest.fixture
def temp_output_dir(tmp_path):
    return tmp_path / "out"


@pytest.fixture
def write_problem(tmp_path):
    def write(data, name="problem.json"):
        path = tmp_path / name
        path.write_text(json.dumps(data), encoding="utf-8")
        return path

    return write
