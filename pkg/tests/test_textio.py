import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from plinfer.distributions import BoxUniform, GaussianFull, GaussianMixture, LogNormalDiag, PointMass
from plinfer.textio import (
    METRIC_COLUMNS,
    NA,
    append_metrics_row,
    format_metrics_row,
    load_array,
    load_model,
    read_metrics,
    save_array,
    save_model,
)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 5)),
              elements=st.floats(allow_nan=False, allow_infinity=False, width=64)))
def test_array_round_trip_is_exact(tmp_path_factory, a):
    path = tmp_path_factory.mktemp("arr") / "a.csv"
    save_array(path, a)
    np.testing.assert_array_equal(load_array(path), a)


def test_array_file_layout(tmp_path):
    path = tmp_path / "x.csv"
    save_array(path, np.array([[0.1, 2.0]]), ["a", "b"])
    assert path.read_text() == "a,b\n0.10000000000000001,2\n"


def test_array_column_mismatch(tmp_path):
    with pytest.raises(ValueError):
        save_array(tmp_path / "x.csv", np.zeros((2, 2)), ["only"])


@pytest.mark.parametrize("model", [
    BoxUniform([0.0, -1.0], [1.0, 1.0]),
    GaussianFull([0.1, 0.2], [[1.0, 0.3], [0.3, 2.0]]),
    LogNormalDiag([0.0, 1.0], [0.5, 0.2]),
    PointMass([1.0, 2.0]),
    GaussianMixture([0.25, 0.75], (GaussianFull([0.0, 0.0], np.eye(2)), GaussianFull([1.0, 1.0], 0.5 * np.eye(2)))),
])
def test_model_round_trip(tmp_path, model):
    path = tmp_path / "m.txt"
    save_model(path, model)
    clone = load_model(path)
    x = np.array([[0.5, 0.5], [1.0, 2.0]])
    np.testing.assert_array_equal(clone.log_prob(x), model.log_prob(x))
    assert path.read_text().splitlines()[0] == f"kind = {model.kind}"


def test_metrics_table(tmp_path):
    path = tmp_path / "metrics.csv"
    row = {"task": "gmm", "method": "w-pli", "N": 10, "M": 10, "seed": 3, "iteration_count": 5,
           "mmd2_posterior": -0.001, "w2_posterior": 0.25, "ppc_mmd2": float("nan"), "ppc_w2": 1.5,
           "furuta_sync_error": None, "wall_seconds": 2.0}
    append_metrics_row(path, row)
    append_metrics_row(path, row)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(METRIC_COLUMNS)
    assert len(lines) == 3 and lines[1] == lines[2] == format_metrics_row(row)
    assert lines[1].split(",")[8] == NA and lines[1].split(",")[10] == NA
    back = read_metrics(path)
    assert back[0]["ppc_mmd2"] is None and back[0]["mmd2_posterior"] == -0.001 and back[0]["seed"] == 3


def test_read_missing_table(tmp_path):
    assert read_metrics(tmp_path / "none.csv") == []
