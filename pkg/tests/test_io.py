import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from avocado import io
from avocado.errors import FormatError, ParameterError
from avocado.fields import Grid, InverseMap, ScalarField, VectorField, identity_map
from avocado.metrics import CurvePoint
from avocado.params import FlowParams
from avocado.rigid import LandmarkSet


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_subnormal=False)


def _write_header(path, lines):
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# volumes

@given(arrays(float, st.tuples(st.integers(2, 5), st.integers(2, 5), st.integers(2, 4)), elements=finite))
def test_volume_round_trip_is_bit_exact(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("vol") / "v.mhd"
    f = ScalarField(Grid(values.shape, (0.5, 1.25, 2.0), (-3.0, 0.1, 7.0)), values)
    io.write_volume(f, path)
    back = io.read_volume(path)
    assert back.grid == f.grid
    assert back.values.tobytes() == f.values.tobytes()


def test_float32_values_stored_as_met_float(tmp_path):
    values = np.arange(12.0).reshape(4, 3)
    io.write_volume(ScalarField(Grid((4, 3)), values), tmp_path / "a.mhd")
    header, _ = io.read_header(tmp_path / "a.mhd")
    assert header.element_type == "MET_FLOAT"
    assert (tmp_path / "a.raw").stat().st_size == 12 * 4


def test_doubles_fall_back_to_met_double(tmp_path):
    values = np.full((4, 3), 0.1)
    io.write_volume(ScalarField(Grid((4, 3)), values), tmp_path / "a.mhd")
    header, _ = io.read_header(tmp_path / "a.mhd")
    assert header.element_type == "MET_DOUBLE"
    assert np.array_equal(io.read_volume(tmp_path / "a.mhd").values, values)


def test_x_varies_fastest_in_payload(tmp_path):
    values = np.arange(12.0).reshape(4, 3)
    io.write_volume(ScalarField(Grid((4, 3)), values), tmp_path / "a.mhd")
    raw = np.frombuffer((tmp_path / "a.raw").read_bytes(), "<f4")
    assert raw[:4].tolist() == values[:, 0].tolist()


def test_header_keys_written(tmp_path):
    io.write_volume(ScalarField(Grid((4, 3)), np.zeros((4, 3))), tmp_path / "a.mhd")
    text = (tmp_path / "a.mhd").read_text()
    for key in ("NDims = 2", "DimSize = 4 3", "ElementSpacing", "Offset", "ElementType = MET_FLOAT",
                "ElementByteOrderMSB = False", "ElementDataFile = a.raw"):
        assert key in text


def test_byte_count_mismatch_names_the_dimsize_line(tmp_path):
    _write_header(tmp_path / "a.mhd", ["NDims = 2", "DimSize = 4 3", "ElementType = MET_FLOAT",
                                       "ElementDataFile = a.raw"])
    (tmp_path / "a.raw").write_bytes(np.zeros(47, "<f4").tobytes())
    with pytest.raises(FormatError) as err:
        io.read_volume(tmp_path / "a.mhd")
    assert err.value.line == 2
    assert "12 values" in str(err.value) and "47" in str(err.value)


def test_big_endian_rejected(tmp_path):
    _write_header(tmp_path / "a.mhd", ["NDims = 2", "DimSize = 4 3", "ElementType = MET_FLOAT",
                                       "ElementByteOrderMSB = True", "ElementDataFile = a.raw"])
    (tmp_path / "a.raw").write_bytes(np.zeros(12, ">f4").tobytes())
    with pytest.raises(FormatError, match="big-endian") as err:
        io.read_volume(tmp_path / "a.mhd")
    assert err.value.line == 4


def test_missing_key_reported(tmp_path):
    _write_header(tmp_path / "a.mhd", ["NDims = 2", "ElementType = MET_FLOAT", "ElementDataFile = a.raw"])
    with pytest.raises(FormatError, match="DimSize"):
        io.read_volume(tmp_path / "a.mhd")


def test_dims_mismatch_reported_with_line(tmp_path):
    _write_header(tmp_path / "a.mhd", ["NDims = 3", "DimSize = 4 3", "ElementType = MET_FLOAT",
                                       "ElementDataFile = a.raw"])
    with pytest.raises(FormatError) as err:
        io.read_volume(tmp_path / "a.mhd")
    assert err.value.line == 2


def test_unsupported_element_type(tmp_path):
    _write_header(tmp_path / "a.mhd", ["NDims = 2", "DimSize = 4 3", "ElementType = MET_UCHAR",
                                       "ElementDataFile = a.raw"])
    with pytest.raises(FormatError, match="MET_UCHAR"):
        io.read_volume(tmp_path / "a.mhd")


def test_local_payload(tmp_path):
    values = np.arange(6, dtype="<f4")
    head = b"NDims = 2\nDimSize = 3 2\nElementType = MET_FLOAT\nElementDataFile = LOCAL\n"
    (tmp_path / "a.mha").write_bytes(head + values.tobytes())
    f = io.read_volume(tmp_path / "a.mha")
    assert f.values.tolist() == [[0.0, 3.0], [1.0, 4.0], [2.0, 5.0]]


def test_non_finite_values_refused(tmp_path):
    with pytest.raises(ParameterError):
        io.write_volume(ScalarField(Grid((2, 2)), np.array([[0.0, np.nan], [1.0, 2.0]])), tmp_path / "a.mhd")


# ---------------------------------------------------------------------------
# vector fields and maps

def test_identity_map_writes_zero_displacement(tmp_path):
    grid = Grid((4, 3, 5), (0.7, 1.1, 1.3), (2.0, -1.0, 0.5))
    io.write_vector_field(identity_map(grid), tmp_path / "m.mhd")
    raw = np.frombuffer((tmp_path / "m.raw").read_bytes(), "<f4")
    assert raw.size == grid.size * 3 and not raw.any()
    text = (tmp_path / "m.mhd").read_text()
    assert "ElementNumberOfChannels = 3" in text and io.DISPLACEMENT_NOTE in text
    back = io.read_map(tmp_path / "m.mhd")
    assert np.array_equal(back.mapped, grid.coordinates())


def test_map_round_trip_is_bit_exact(tmp_path):
    grid = Grid((5, 4, 3), (1.0, 0.5, 2.0))
    rng = np.random.default_rng(1)
    phi = InverseMap(grid, grid.coordinates() + rng.normal(size=grid.dims + (3,)))
    io.write_vector_field(phi, tmp_path / "m.mhd")
    back = io.read_map(tmp_path / "m.mhd")
    assert back.displacement().tobytes() == phi.displacement().tobytes()


def test_vector_field_round_trip(tmp_path):
    grid = Grid((6, 5))
    v = VectorField(grid, np.random.default_rng(2).normal(size=(6, 5, 2)))
    io.write_vector_field(v, tmp_path / "v.mhd")
    assert io.read_vector_field(tmp_path / "v.mhd").values.tobytes() == v.values.tobytes()
    with pytest.raises(FormatError, match="vector"):
        io.read_map(tmp_path / "v.mhd")


def test_scalar_file_read_as_field_is_a_channel_error(tmp_path):
    io.write_volume(ScalarField(Grid((4, 3)), np.zeros((4, 3))), tmp_path / "a.mhd")
    with pytest.raises(FormatError, match="channels"):
        io.read_vector_field(tmp_path / "a.mhd")
    io.write_vector_field(VectorField.zeros(Grid((4, 3))), tmp_path / "v.mhd")
    with pytest.raises(FormatError, match="channels"):
        io.read_volume(tmp_path / "v.mhd")


# ---------------------------------------------------------------------------
# landmarks

def test_two_rows_make_one_pair(tmp_path):
    (tmp_path / "l.csv").write_text("id,frame,x,y,z\n1,source,1,2,3\n1,target,4,5,6\n")
    lm = io.read_landmarks(tmp_path / "l.csv")
    assert len(lm) == 1 and lm.ids == (1,)
    assert lm.source.tolist() == [[1.0, 2.0, 3.0]] and lm.target.tolist() == [[4.0, 5.0, 6.0]]


def test_rows_pair_in_any_order(tmp_path):
    (tmp_path / "l.csv").write_text("id,frame,x,y\n2,target,0,1\n1,source,5,5\n2,source,9,9\n1,target,6,6\n")
    lm = io.read_landmarks(tmp_path / "l.csv")
    assert lm.ids == (2, 1)
    assert lm.source.tolist() == [[9.0, 9.0], [5.0, 5.0]]


def test_unpaired_id_names_the_row(tmp_path):
    (tmp_path / "l.csv").write_text("id,frame,x,y,z\n1,source,1,2,3\n1,target,4,5,6\n7,source,0,0,0\n")
    with pytest.raises(FormatError, match="id 7") as err:
        io.read_landmarks(tmp_path / "l.csv")
    assert err.value.line == 4


def test_duplicate_id_frame_names_the_row(tmp_path):
    (tmp_path / "l.csv").write_text("id,frame,x,y\n1,source,1,2\n1,source,4,5\n1,target,4,5\n")
    with pytest.raises(FormatError, match="duplicate") as err:
        io.read_landmarks(tmp_path / "l.csv")
    assert err.value.line == 3


@pytest.mark.parametrize("row", ["1,source,1", "1,middle,1,2", "1,source,a,2", "1,source,inf,2", ",source,1,2"])
def test_malformed_row_names_the_row(tmp_path, row):
    (tmp_path / "l.csv").write_text(f"id,frame,x,y\n1,target,0,0\n{row}\n")
    with pytest.raises(FormatError) as err:
        io.read_landmarks(tmp_path / "l.csv")
    assert err.value.line == 3


def test_bad_landmark_header(tmp_path):
    (tmp_path / "l.csv").write_text("name,frame,x,y\n")
    with pytest.raises(FormatError) as err:
        io.read_landmarks(tmp_path / "l.csv")
    assert err.value.line == 1


@given(arrays(float, st.tuples(st.integers(1, 6), st.sampled_from([2, 3])), elements=finite))
def test_landmark_round_trip_full_precision(tmp_path_factory, points):
    path = tmp_path_factory.mktemp("lm") / "l.csv"
    lm = LandmarkSet(points, points[::-1] * 0.37, tuple(range(len(points))))
    io.write_landmarks(lm, path)
    back = io.read_landmarks(path)
    assert back.source.tobytes() == lm.source.tobytes()
    assert back.target.tobytes() == lm.target.tobytes()
    assert back.ids == lm.ids


# ---------------------------------------------------------------------------
# config

def test_defaults_cover_every_field():
    cfg = io.config_from_dict({})
    d = cfg.to_dict()
    for name in FlowParams.__dataclass_fields__:
        assert name in d
    assert d["eps_rbf"] == 1.0 and d["eps_image"] == 3e-4 and d["alpha_incomp"] == 1.0


def test_unknown_key_is_named():
    with pytest.raises(ParameterError, match="'smoothnes'"):
        io.config_from_dict({"smoothnes": 1.0})


def test_wrong_type_is_named():
    with pytest.raises(ParameterError, match="'dt'"):
        io.config_from_dict({"dt": "fast"})


def test_alpha_contradicting_mode_rejected():
    with pytest.raises(ParameterError, match="contradicts"):
        io.config_from_dict({"mode": "volume-preserving", "alpha_incomp": 0.0})


def test_modes_set_alpha():
    assert io.config_from_dict({"mode": "unconstrained"}).flow_params().alpha_incomp == 0.0
    assert io.config_from_dict({"mode": "custom", "alpha_incomp": 0.25}).flow_params().alpha_incomp == 0.25


def test_alpha_field_mode_reads_volume(tmp_path):
    alpha = ScalarField(Grid((4, 4)), np.full((4, 4), 0.5))
    io.write_volume(alpha, tmp_path / "alpha.mhd")
    (tmp_path / "c.json").write_text(json.dumps({"mode": "alpha.mhd"}))
    cfg = io.read_config(tmp_path / "c.json")
    got = cfg.flow_params(str(tmp_path)).alpha_incomp
    assert np.array_equal(got.values, alpha.values)


@given(st.fixed_dictionaries({}, optional={
    "mode": st.sampled_from(["volume-preserving", "unconstrained"]),
    "dt": st.floats(0.01, 2.0),
    "eps_user": st.floats(0.1, 3.0),
    "max_iter_landmark": st.integers(1, 500),
    "skip_rigid": st.booleans(),
    "seed": st.integers(0, 2**31),
}))
def test_config_normalization_is_idempotent(tmp_path_factory, data):
    path = tmp_path_factory.mktemp("cfg") / "c.json"
    cfg = io.config_from_dict(data)
    io.write_config(cfg, path)
    again = io.read_config(path)
    assert again == cfg
    assert io.config_from_dict(again.to_dict()).to_dict() == cfg.to_dict()


def test_invalid_json_reports_line(tmp_path):
    (tmp_path / "c.json").write_text('{\n  "dt": 0.1,\n  oops\n}\n')
    with pytest.raises(FormatError) as err:
        io.read_config(tmp_path / "c.json")
    assert err.value.line == 3


# ---------------------------------------------------------------------------
# reports and curves

def test_report_round_trip(tmp_path):
    entries = {"converged": True, "volume_change_pct": -0.0123456789012345, "runs": 3,
               "rms": [0.5, 0.25], "reason": "energy change small", "missing": None}
    io.write_report(entries, tmp_path / "r.txt", timestamp="2020-01-01T00:00:00+00:00")
    back = io.read_report(tmp_path / "r.txt")
    assert back.pop(io.TIMESTAMP_KEY) == "2020-01-01T00:00:00+00:00"
    assert back == entries


def test_report_timestamp_on_its_own_line(tmp_path):
    io.write_report({"a": 1}, tmp_path / "r1.txt", timestamp="t1")
    io.write_report({"a": 1}, tmp_path / "r2.txt", timestamp="t2")
    l1 = (tmp_path / "r1.txt").read_text().splitlines()
    l2 = (tmp_path / "r2.txt").read_text().splitlines()
    diff = [a for a, b in zip(l1, l2) if a != b]
    assert len(diff) == 1 and diff[0].startswith(io.TIMESTAMP_KEY)


def test_curve_round_trip(tmp_path):
    curve = [CurvePoint(0.0, 0.0, 1.25, 0.0, 1, 0, []),
             CurvePoint(0.5, 0.61, 1.3, 0.01, 1, 0, []),
             CurvePoint(5.0, float("nan"), float("nan"), float("nan"), 0, 1, ["boom"])]
    io.write_curve(curve, tmp_path / "c.csv")
    rows = io.read_curve(tmp_path / "c.csv")
    assert [r["sigma"] for r in rows] == [0.0, 0.5, 5.0]
    assert rows[1]["mean_tre"] == 1.3 and rows[2]["failures"] == 1
    assert np.isnan(rows[2]["mean_tre"])
