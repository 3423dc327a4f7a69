import json
import math

import numpy as np
import pandas as pd
import pytest
from src.memlqr.models.report import ConvergenceRow, InstanceDigest, ResidualRow, RunReport
from src.memlqr.models.reports import table_dump
from src.memlqr.models.reports.csv_report import CONVERGENCE_COLUMNS, CSVReport
from src.memlqr.models.reports.json_report import JSONReport
from src.memlqr.solver import closedloop, propagator, riccati
from src.memlqr.solver.report_manager import estimate_orders, scalar_oracle
from src.memlqr.utils.exceptions import ExportError, ProblemParseError


@pytest.fixture
def run_report(scalar_lqr):
    return RunReport(
        command="solve",
        instance=InstanceDigest.from_instance(scalar_lqr),
        results={"J_ol": 0.76, "J_cl": 0.7601},
        residuals=[ResidualRow(name="normal equation", value=1e-14, tolerance=1e-10)],
        warnings=["P0_psd drift 1.0e-07 exceeds 1.0e-08"],
    )


def test_residual_row_status():
    assert ResidualRow(name="a", value=1e-3, tolerance=1e-2).status == "pass"
    assert ResidualRow(name="b", value=1e-1, tolerance=1e-2).failed
    assert ResidualRow(name="c", value=math.nan, tolerance=1.0).status == "fail"
    assert ResidualRow(name="d", value=0.5).status == "info"
    assert ResidualRow(name="e", note="no oracle").status == "skip"
    assert ResidualRow(name="f", value=1.0, tolerance=0.1, status="info").status == "info"


def test_run_report_failures(run_report):
    assert run_report.passed
    failing = run_report.model_copy(
        update={"residuals": [ResidualRow(name="cost gap", value=1.0, tolerance=0.1)]}
    )
    assert failing.failed == ["cost gap"]


def test_json_report_is_deterministic(run_report, temp_output_dir):
    rendered = JSONReport.render(run_report)
    payload = json.loads(rendered)
    assert payload["schema"] == "memlqr-report/1"
    assert payload["instance"]["kernel"] == run_report.instance.kernel
    assert payload["timing"] is None
    assert list(payload) == sorted(payload)

    path = JSONReport().export(run_report, temp_output_dir / "report.json")
    assert path.read_text(encoding="utf-8") == rendered
    assert JSONReport.render(run_report) == rendered


def test_json_report_unwritable(run_report, tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("", encoding="utf-8")
    with pytest.raises(ExportError):
        JSONReport().export(run_report, blocker / "report.json")


def test_trajectory_csv(scalar_lqr, temp_output_dir):
    law = riccati.feedback_gains(riccati.integrate_backward(scalar_lqr), scalar_lqr.B)
    trajectory = closedloop.simulate_feedback(scalar_lqr, law)
    path = CSVReport().export_trajectory(trajectory, temp_output_dir / "closedloop.csv")
    df = pd.read_csv(path)
    assert list(df.columns) == ["t", "w_1", "u_1"]
    assert len(df) == scalar_lqr.grid.N + 1
    assert np.allclose(df["w_1"].to_numpy(), trajectory.w[:, 0], rtol=1e-14, atol=0.0)


def test_convergence_csv(temp_output_dir):
    rows = [
        ConvergenceRow(N=50, h=0.02, quantity="J_ol", value=0.76, error=1e-4),
        ConvergenceRow(N=100, h=0.01, quantity="J_ol", value=0.7616, error=2.5e-5, order=2.0),
        ConvergenceRow(N=100, h=0.01, quantity="gap", value=0.0, error=0.0, order="exact"),
    ]
    path = CSVReport().export_convergence(rows, temp_output_dir / "convergence.csv")
    df = pd.read_csv(path)
    assert list(df.columns) == CONVERGENCE_COLUMNS
    assert df["order"].tolist()[1:] == ["2.0", "exact"]


def test_table_dump_round_trip(history_instance, tmp_path):
    prop = propagator.build_propagator(history_instance)
    solution = riccati.integrate_backward(history_instance, prop)
    sections = {**table_dump.propagator_sections(prop), **table_dump.riccati_sections(solution)}
    path = table_dump.write_tables(tmp_path / "tables.bin", 1, history_instance.grid, sections)
    header, loaded = table_dump.read_tables(path)
    assert header == {"n": 1, "N": 40, "h": history_instance.h}
    assert set(loaded) == set(sections)
    assert "P2@10" in loaded
    for tag, values in sections.items():
        assert np.array_equal(loaded[tag], values), tag


def test_table_dump_rejects_foreign_file(tmp_path):
    path = tmp_path / "tables.bin"
    path.write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(ProblemParseError):
        table_dump.read_tables(path)


def test_estimate_orders_with_reference():
    Ns = [50, 100, 200]
    values = [1.0 + 3.0 / N**2 for N in Ns]
    errors, orders = estimate_orders(Ns, values, reference=1.0)
    assert errors[0] == pytest.approx(3.0 / 2500)
    assert orders[0] is None
    assert orders[1] == pytest.approx(2.0, abs=1e-6)
    assert orders[2] == pytest.approx(2.0, abs=1e-6)


def test_estimate_orders_without_reference():
    Ns = [25, 50, 100, 200]
    values = [2.0 - 0.5 / N for N in Ns]
    errors, orders = estimate_orders(Ns, values)
    assert errors[-1] == 0.0
    assert orders[:2] == [None, None]
    assert orders[2] == pytest.approx(1.0, abs=1e-6)
    assert orders[3] == pytest.approx(1.0, abs=1e-6)


def test_estimate_orders_exact():
    _, orders = estimate_orders([50, 100, 200], [0.25, 0.25, 0.25])
    assert orders == ["exact", "exact", "exact"]


def test_scalar_oracle(scalar_lqr, scalar_memory, history_instance):
    assert scalar_oracle(scalar_lqr) == pytest.approx(math.tanh(1.0))
    assert scalar_oracle(scalar_memory) is None
    assert scalar_oracle(history_instance) is None
