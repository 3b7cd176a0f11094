"""Renderer tests: schema checks, sidecar round trips, determinism."""

import json

import pytest

from decay_plots import EXPECTED_HEADER, FigureSpec, SchemaMismatch, render_figure
from decay_plots.figures import read_table

DECAY_LINES = (
    EXPECTED_HEADER,
    "1,1,0.27586206896551724,0.32000000000000001,"
    "0.38178780494756458,0.68266316784208663",
    "2,1,0.10344827586206896,0.32000000000000001,"
    "0.38178780494756458,0.46602899849712532",
    "3,1,0.035066505441354292,0.32000000000000001,"
    "0.38178780494756458,0.31813817054655441",
)

FLAT_LINES = (
    EXPECTED_HEADER,
    "1,1,0.78048780487804881,1.28,nan,nan",
    "2,1,0.70112966054535583,1.28,nan,nan",
)

KS_LINES = (
    EXPECTED_HEADER,
    "4,1,0.70856102003642974,1.28,nan,nan",
    "5,1,0.70112966054535583,1.28,nan,nan",
    "4,1,0.33874529847193847,0.97999999999999998,nan,nan",
    "5,1,0.31102947583919475,0.97999999999999998,nan,nan",
    "4,1,0.093847561029384756,0.71999999999999997,"
    "0.23105857863000487,0.39687209124159859",
    "5,1,0.067294810573948276,0.71999999999999997,"
    "0.23105857863000487,0.31500612437171252",
)

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def write_csv(tmp_path, name, lines):
    path = tmp_path / name
    path.write_text("\n".join(lines) + "\n")
    return path


def sidecar_of(image_path):
    return json.loads(image_path.with_suffix(".json").read_text())


class TestReadTable:
    def test_returns_header_fields_and_raw_rows(self, tmp_path):
        path = write_csv(tmp_path, "sweep.csv", DECAY_LINES)
        header, rows = read_table(path)
        assert header == EXPECTED_HEADER.split(",")
        assert rows == [line.split(",") for line in DECAY_LINES[1:]]

    def test_header_only_file_has_no_rows(self, tmp_path):
        path = write_csv(tmp_path, "sweep.csv", (EXPECTED_HEADER,))
        assert read_table(path) == (EXPECTED_HEADER.split(","), [])

    @pytest.mark.parametrize("header", [
        "depth,degree,var_ratio,ks_param,eps,wrong",
        "depth,degree,var_ratio,ks_param,eps,ref_bound,extra",
        "depth,degree,var_ratio",
        " depth,degree,var_ratio,ks_param,eps,ref_bound",
        "",
    ])
    def test_rejects_foreign_header(self, tmp_path, header):
        path = write_csv(tmp_path, "sweep.csv", (header, DECAY_LINES[1]))
        with pytest.raises(SchemaMismatch):
            read_table(path)

    def test_rejects_empty_file(self, tmp_path):
        path = tmp_path / "sweep.csv"
        path.write_text("")
        with pytest.raises(SchemaMismatch):
            read_table(path)

    def test_rejects_ragged_row(self, tmp_path):
        path = write_csv(tmp_path, "sweep.csv",
                         (EXPECTED_HEADER, "1,1,0.5,0.32,0.38"))
        with pytest.raises(SchemaMismatch, match="line 2"):
            read_table(path)


class TestFigureSpec:
    def test_rejects_unknown_kind(self):
        with pytest.raises(ValueError):
            FigureSpec("sweep.csv", "pie", True, "out.png")


class TestDecayFigure:
    @pytest.fixture
    def decay_csv(self, tmp_path):
        return write_csv(tmp_path, "decay.csv", DECAY_LINES)

    def test_writes_image_and_sidecar(self, decay_csv, tmp_path):
        image = tmp_path / "decay.png"
        out = render_figure(FigureSpec(str(decay_csv), "decay", True, str(image)))
        assert out == str(image)
        assert image.read_bytes().startswith(PNG_MAGIC)
        assert image.with_suffix(".json").exists()

    def test_sidecar_echoes_columns_verbatim(self, decay_csv, tmp_path):
        image = tmp_path / "decay.png"
        render_figure(FigureSpec(str(decay_csv), "decay", True, str(image)))
        payload = sidecar_of(image)
        assert payload["kind"] == "decay"
        header = EXPECTED_HEADER.split(",")
        assert set(payload["series"]) == {"depth", "var_ratio", "ref_bound"}
        for name, series in payload["series"].items():
            at = header.index(name)
            assert series == [line.split(",")[at] for line in DECAY_LINES[1:]]

    def test_flat_sweep_omits_reference_curve(self, tmp_path):
        path = write_csv(tmp_path, "flat.csv", FLAT_LINES)
        image = tmp_path / "flat.png"
        render_figure(FigureSpec(str(path), "decay", True, str(image)))
        series = sidecar_of(image)["series"]
        assert "ref_bound" not in series
        assert series["var_ratio"] == [line.split(",")[2] for line in FLAT_LINES[1:]]

    def test_non_numeric_value_is_schema_mismatch(self, tmp_path):
        broken = list(DECAY_LINES)
        broken[1] = broken[1].replace("0.27586206896551724", "oops")
        path = write_csv(tmp_path, "broken.csv", broken)
        with pytest.raises(SchemaMismatch, match="var_ratio"):
            render_figure(FigureSpec(str(path), "decay", True,
                                     str(tmp_path / "broken.png")))

    def test_identical_specs_give_identical_bytes(self, decay_csv, tmp_path):
        first = tmp_path / "first.png"
        second = tmp_path / "second.png"
        render_figure(FigureSpec(str(decay_csv), "decay", True, str(first)))
        render_figure(FigureSpec(str(decay_csv), "decay", True, str(second)))
        assert first.read_bytes() == second.read_bytes()
        assert (first.with_suffix(".json").read_text()
                == second.with_suffix(".json").read_text())

    def test_log_and_linear_axes_differ(self, decay_csv, tmp_path):
        logged = tmp_path / "log.png"
        linear = tmp_path / "linear.png"
        render_figure(FigureSpec(str(decay_csv), "decay", True, str(logged)))
        render_figure(FigureSpec(str(decay_csv), "decay", False, str(linear)))
        assert logged.read_bytes() != linear.read_bytes()

    def test_header_only_input_still_renders(self, tmp_path):
        path = write_csv(tmp_path, "empty.csv", (EXPECTED_HEADER,))
        image = tmp_path / "empty.png"
        render_figure(FigureSpec(str(path), "decay", True, str(image)))
        assert image.read_bytes().startswith(PNG_MAGIC)
        assert sidecar_of(image)["series"] == {"depth": [], "var_ratio": []}


class TestKsFigure:
    @pytest.fixture
    def ks_csv(self, tmp_path):
        return write_csv(tmp_path, "ks.csv", KS_LINES)

    def test_sidecar_echoes_columns_verbatim(self, ks_csv, tmp_path):
        image = tmp_path / "ks.png"
        render_figure(FigureSpec(str(ks_csv), "ks", True, str(image)))
        payload = sidecar_of(image)
        assert payload["kind"] == "ks"
        header = EXPECTED_HEADER.split(",")
        assert set(payload["series"]) == {"ks_param", "var_ratio"}
        for name, series in payload["series"].items():
            at = header.index(name)
            assert series == [line.split(",")[at] for line in KS_LINES[1:]]

    def test_threshold_crossing_survives_round_trip(self, ks_csv, tmp_path):
        image = tmp_path / "ks.png"
        render_figure(FigureSpec(str(ks_csv), "ks", True, str(image)))
        values = [float(token) for token in sidecar_of(image)["series"]["ks_param"]]
        above = [value > 1.0 for value in values]
        assert above[0] and not above[-1]
        assert sum(1 for a, b in zip(above, above[1:]) if a != b) == 1
