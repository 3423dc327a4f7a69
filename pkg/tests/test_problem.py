import json

import numpy as np
import pytest
from src.memlqr.utils.exceptions import (
    DimensionMismatchError,
    ExportError,
    GridError,
    ProblemParseError,
    ProblemValidationError,
)


def test_parse_scalar_lqr(scalar_lqr):
    assert scalar_lqr.n == 1 and scalar_lqr.m == 1
    assert scalar_lqr.tau_index == 0
    assert scalar_lqr.K.is_zero
    assert scalar_lqr.h == pytest.approx(1.0 / 200)
    assert scalar_lqr.init.path.shape == (1, 1)


def test_history_is_sampled_on_tau(history_instance):
    assert history_instance.tau_index == 10
    assert history_instance.init.history.shape == (11, 1)
    assert np.all(history_instance.init.history == 1.0)


def test_arrays_are_read_only(scalar_memory):
    with pytest.raises(ValueError):
        scalar_memory.A[0, 0] = 1.0


def test_asymmetric_q_rejected(problem_manager, random_instance):
    data = random_instance.spec.model_dump(mode="json")
    data["Q"][0][1] += 1.0
    with pytest.raises(ProblemValidationError) as excinfo:
        problem_manager.parse(data)
    assert excinfo.value.exit_code == 2
    assert "Q not symmetric" in str(excinfo.value)


def test_indefinite_q_rejected(problem_manager, scalar_lqr_data):
    scalar_lqr_data["Q"] = [[-1.0]]
    with pytest.raises(ProblemValidationError) as excinfo:
        problem_manager.parse(scalar_lqr_data)
    assert "positive semidefinite" in str(excinfo.value)


def test_shape_mismatch(problem_manager, scalar_lqr_data):
    scalar_lqr_data["B"] = [[1.0, 0.0]]
    with pytest.raises(DimensionMismatchError) as excinfo:
        problem_manager.parse(scalar_lqr_data)
    assert excinfo.value.exit_code == 2
    assert "field: B" in str(excinfo.value)


def test_missing_field_is_parse_error(problem_manager, scalar_lqr_data):
    del scalar_lqr_data["Q"]
    with pytest.raises(ProblemParseError) as excinfo:
        problem_manager.parse(scalar_lqr_data)
    assert excinfo.value.exit_code == 1


def test_tau_off_grid(problem_manager, history_data):
    history_data["tau"] = 0.2513
    with pytest.raises(ProblemValidationError) as excinfo:
        problem_manager.parse(history_data)
    assert "invariant: tau" in str(excinfo.value)


def test_tau_requires_history(problem_manager, history_data):
    del history_data["history"]
    with pytest.raises(ProblemValidationError) as excinfo:
        problem_manager.parse(history_data)
    assert "invariant: history" in str(excinfo.value)


def test_noncommuting_matrix_kernel(problem_manager):
    data = {
        "n": 2,
        "m": 1,
        "A": [[0.0, 1.0], [0.0, 0.0]],
        "B": [[0.0], [1.0]],
        "Q": [[1.0, 0.0], [0.0, 1.0]],
        "kernel": {"type": "constant", "c": 1.0, "matrix": [[1.0, 0.0], [0.0, 2.0]]},
        "T": 1.0,
        "N": 10,
        "xi0": [1.0, 0.0],
    }
    with pytest.raises(ProblemValidationError) as excinfo:
        problem_manager.parse(data)
    assert "does not commute" in str(excinfo.value)


def test_commuting_matrix_kernel(problem_manager):
    data = {
        "n": 2,
        "m": 2,
        "A": [[-1.0, 0.0], [0.0, -2.0]],
        "B": [[1.0, 0.0], [0.0, 1.0]],
        "Q": [[1.0, 0.0], [0.0, 1.0]],
        "kernel": {
            "type": "exponential",
            "c": 0.5,
            "gamma": 1.0,
            "matrix": [[1.0, 0.0], [0.0, 3.0]],
        },
        "T": 1.0,
        "N": 10,
        "xi0": [1.0, 1.0],
    }
    instance = problem_manager.parse(data)
    assert instance.K.kind == "commuting_matrix"
    assert instance.kernel_blocks()[0, 1, 1] == pytest.approx(1.5)
    assert instance.K.tag.endswith("*C")


def test_polynomial_kernel(problem_manager, scalar_lqr_data):
    scalar_lqr_data["kernel"] = {"type": "polynomial", "coefficients": [1.0, -2.0]}
    instance = problem_manager.parse(scalar_lqr_data)
    assert instance.kernel_blocks()[-1, 0, 0] == pytest.approx(-1.0)


def test_samples_kernel_length(problem_manager, scalar_lqr_data):
    scalar_lqr_data["kernel"] = {"type": "samples", "values": [0.0] * 10}
    with pytest.raises(DimensionMismatchError):
        problem_manager.parse(scalar_lqr_data)


def test_load_missing_file(problem_manager, tmp_path):
    with pytest.raises(ProblemParseError) as excinfo:
        problem_manager.load_problem(tmp_path / "absent.json")
    assert excinfo.value.exit_code == 1


def test_load_malformed_json(problem_manager, tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{ not json", encoding="utf-8")
    with pytest.raises(ProblemParseError) as excinfo:
        problem_manager.load_problem(path)
    assert "invalid JSON" in str(excinfo.value)


def test_load_non_object(problem_manager, write_problem):
    with pytest.raises(ProblemParseError):
        problem_manager.load_problem(write_problem([1, 2, 3]))


def test_save_and_load(problem_manager, random_instance, tmp_path):
    path = problem_manager.save_problem(random_instance, tmp_path / "saved" / "random.json")
    loaded = problem_manager.load_problem(path)
    assert np.array_equal(loaded.A, random_instance.A)
    assert np.array_equal(loaded.Q, random_instance.Q)
    assert np.array_equal(loaded.kernel_blocks(), random_instance.kernel_blocks())
    assert np.array_equal(loaded.init.xi0, random_instance.init.xi0)


def test_save_problem_unwritable(problem_manager, scalar_lqr, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("", encoding="utf-8")
    with pytest.raises(ExportError):
        problem_manager.save_problem(scalar_lqr, blocker / "problem.json")


def test_builder_heat(problem_manager):
    instance = problem_manager.parse({"builder": "heat", "n_space": 9, "nu": 0.1, "N": 20})
    assert instance.n == 8 and instance.m == 8
    assert np.allclose(instance.A, instance.A.T)
    assert instance.Q[0, 0] == pytest.approx(1.0 / 9)


def test_builder_random_is_seeded(problem_manager):
    data = {"builder": "random", "n": 3, "m": 2, "seed": 7, "N": 10}
    first = problem_manager.parse(dict(data))
    second = problem_manager.parse(dict(data))
    assert np.array_equal(first.A, second.A)
    assert np.max(np.linalg.eigvals(first.A).real) == pytest.approx(-3.0)


def test_unknown_builder(problem_manager):
    with pytest.raises(ProblemValidationError) as excinfo:
        problem_manager.parse({"builder": "wave"})
    assert "unknown builder" in str(excinfo.value)


def test_regrid_resamples(problem_manager, history_instance):
    finer = problem_manager.regrid(history_instance, 80)
    assert finer.grid.N == 80
    assert finer.tau_index == 20
    assert finer.init.history.shape == (21, 1)


def test_regrid_moves_tau_off_grid(problem_manager, history_instance):
    with pytest.raises(GridError):
        problem_manager.regrid(history_instance, 30)


def test_regrid_sampled_kernel(problem_manager, scalar_lqr_data):
    scalar_lqr_data["N"] = 4
    scalar_lqr_data["kernel"] = {"type": "samples", "values": [0.0] * 5}
    instance = problem_manager.parse(scalar_lqr_data)
    with pytest.raises(GridError):
        problem_manager.regrid(instance, 8)


def test_spec_dump_is_json(random_instance):
    payload = json.dumps(random_instance.spec.model_dump(mode="json", exclude_none=True))
    assert '"kernel"' in payload
