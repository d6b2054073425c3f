import json
import math

import numpy as np
import pytest

from nearisometry import cli, jsonio
from nearisometry.errors import PointFileError
from nearisometry.maps import Ball, ExponentialAngle, distortion_audit, map_from_dict, slow_twist


def write(path, text):
    path.write_text(text)
    return path


def run(tmp_path, *argv):
    return cli.run(["--out-dir", str(tmp_path), *map(str, argv)])


def result(tmp_path, command):
    return json.loads((tmp_path / f"{command}.json").read_text())


def test_parse_csv_with_labels_and_comments(tmp_path):
    f = write(tmp_path / "p.csv", "# header\n0,0,a\n1, 0 ,b\n\n0,1,c\n")
    config, notes = jsonio.parse_point_file(f)
    assert config.points.tolist() == [[0, 0], [1, 0], [0, 1]]
    assert list(config.labels) == ["a", "b", "c"] and notes == []


def test_parse_json_forms(tmp_path):
    a = write(tmp_path / "a.json", "[[0, 0], [1.5, 2]]")
    b = write(tmp_path / "b.json", '{"points": [[0, 0], [1, 2]], "labels": ["x", "y"]}')
    assert jsonio.parse_point_file(a)[0].points.tolist() == [[0, 0], [1.5, 2]]
    assert list(jsonio.parse_point_file(b)[0].labels) == ["x", "y"]


@pytest.mark.parametrize("text,row", [
    ("0,0\n1,0\n1\n", 3),
    ("0,0\n1,x,2\n", 2),
    ("0,0\n1,nan\n", 2),
])
def test_parse_errors_carry_row(tmp_path, text, row):
    with pytest.raises(PointFileError) as info:
        jsonio.parse_point_file(write(tmp_path / "bad.csv", text))
    assert info.value.row == row and f"row {row}" in str(info.value)


def test_parse_dimension_mismatch(tmp_path):
    with pytest.raises(PointFileError) as info:
        jsonio.parse_point_file(write(tmp_path / "p.csv", "0,0\n1,0\n"), expected_dim=3)
    assert info.value.row == 1
    with pytest.raises(PointFileError):
        jsonio.parse_point_file(tmp_path / "missing.csv")


def test_parse_duplicates_warn(tmp_path):
    with pytest.warns(UserWarning):
        _, notes = jsonio.parse_point_file(write(tmp_path / "p.csv", "0,0\n1,0\n0,0\n"))
    assert notes == ["duplicate point: row 3 repeats row 1"]


def test_dumps_precision_and_schema():
    text = jsonio.dumps({"x": 0.1, "y": np.float64(1 / 3), "z": [math.inf, -math.inf], "n": np.int64(3)})
    data = json.loads(text)
    assert data["schemaVersion"] == jsonio.SCHEMA_VERSION
    assert data["x"] == 0.1 and data["y"] == 1 / 3 and data["n"] == 3
    assert "0.10000000000000001" in text and "Infinity" in text


@pytest.mark.parametrize("x", [0.1, 1 / 3, 1e-300, 123456789.123456789, -2.5e17])
def test_float_round_trip(x):
    assert json.loads(jsonio.dumps({"v": x}))["v"] == x


def test_map_round_trip_reaudit(tmp_path):
    f = slow_twist(np.eye(2), [ExponentialAngle(0.2, 1.0)])
    path = jsonio.write_json(tmp_path / "m.json", f)
    g = map_from_dict(jsonio.loads(path.read_text()))
    region = Ball(np.zeros(2), 5.0)
    a, b = distortion_audit(f, region, 500), distortion_audit(g, region, 500)
    assert abs(a.sup_jacobian_defect - b.sup_jacobian_defect) <= 1e-12
    assert abs(a.sup_pair_ratio_defect - b.sup_pair_ratio_defect) <= 1e-12


def test_align_command(tmp_path, capsys):
    P = write(tmp_path / "P.csv", "0,0\n1,0\n0,2\n")
    Q = write(tmp_path / "Q.csv", "1,1\n1,2\n-1,1\n")
    assert run(tmp_path, "align", P, Q) == cli.EXIT_OK
    out = result(tmp_path, "align")
    assert out["status"] == "ok" and out["residual"] <= 1e-12
    assert json.loads(capsys.readouterr().out) == out


def test_match_command(tmp_path):
    P = write(tmp_path / "P.csv", "0,0\n3,0\n0,1\n5,5\n")
    Q = write(tmp_path / "Q.csv", "5,5\n0,1\n3,0\n0,0\n")
    assert run(tmp_path, "match", P, Q) == cli.EXIT_OK
    best = result(tmp_path, "match")["correspondences"][0]
    assert best["permutation"] == [[0, 3], [1, 2], [2, 1], [3, 0]]


def test_extend_finite_and_audit(tmp_path):
    E = write(tmp_path / "E.csv", "0,0\n1,0\n")
    F = write(tmp_path / "F.csv", "0,0\n0.99999,0.001\n")
    assert run(tmp_path, "extend-finite", E, F, "--epsilon", 0.2, "--samples", 300) == cli.EXIT_OK
    out = result(tmp_path, "extend-finite")["result"]
    assert out["interpolationError"] <= 1e-9 and out["auditedEpsilon"] <= 0.2
    header = (tmp_path / "extend-finite-samples.tsv").read_text().splitlines()[0]
    assert header.split("\t")[:2] == ["x0", "x1"]
    assert run(tmp_path, "audit", tmp_path / "extend-finite-map.json", "--ball", 0, 0, 10) == cli.EXIT_OK
    assert result(tmp_path, "audit")["status"] == "ok"


def test_refusal_exit_code(tmp_path):
    Y = np.array([[0, 0], [1, 0], [0.5, 0.8]])
    Y = np.vstack([Y, Y + [1e6, 0]])
    Z = Y.copy()
    Z[3:, 1] *= -1
    E = tmp_path / "E.csv"
    F = tmp_path / "F.csv"
    jsonio.write_points_csv(E, Y)
    jsonio.write_points_csv(F, Z)
    code = run(tmp_path, "extend-finite", E, F, "--epsilon", 0.1, "--properness", "--K", 6, "--C-K", 1)
    assert code == cli.EXIT_REFUSAL
    out = result(tmp_path, "extend-finite")
    assert out["status"] == "refused" and out["result"]["map"] is None


def test_error_exit_code_with_hint(tmp_path, capsys):
    E = write(tmp_path / "E.csv", "0,0\n1,0\n0,1\n")
    code = run(tmp_path, "extend-finite", E, E, "--epsilon", 0.1)
    assert code == cli.EXIT_ERROR
    err = capsys.readouterr().err
    assert "KExceedsD" in err and "hint:" in err
    bad = write(tmp_path / "bad.csv", "0,0\n1,oops\n")
    assert run(tmp_path, "align", bad, bad) == cli.EXIT_ERROR
    assert "row 2" in capsys.readouterr().err


def test_epsilon_validation(tmp_path):
    E = write(tmp_path / "E.csv", "0,0\n1,0\n")
    with pytest.raises(SystemExit):
        run(tmp_path, "extend-finite", E, E, "--epsilon", 1.5)


def test_sphere_gen_finite_field(tmp_path):
    assert run(tmp_path, "sphere-gen", "--finite-field", 2, 5) == cli.EXIT_OK
    rows = (tmp_path / "sphere-ff-2-5.csv").read_text().splitlines()
    assert len(rows) == 30
    assert run(tmp_path, "metrics", tmp_path / "sphere-ff-2-5.csv", "--dense-n", 5000) == cli.EXIT_OK
    assert result(tmp_path, "metrics")["status"] == "ok"


def test_sphere_gen_riesz_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert cli.run(["--out-dir", str(d), "sphere-gen", "--riesz", "2", "20", "1", "--seed", "3",
                        "--max-iters", "50"]) == cli.EXIT_OK
    assert (a / "sphere-gen.json").read_bytes() == (b / "sphere-gen.json").read_bytes()
    assert (a / "sphere-riesz-2-20-1-seed3.csv").read_bytes() == (b / "sphere-riesz-2-20-1-seed3.csv").read_bytes()


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env"))
    assert cli.run(["sphere-gen", "--finite-field", "1", "3"]) == cli.EXIT_OK
    assert (tmp_path / "env" / "sphere-gen.json").exists()


def test_main_exits_with_status(tmp_path):
    with pytest.raises(SystemExit) as info:
        cli.main(["--out-dir", str(tmp_path), "sphere-gen", "--finite-field", "1", "3"])
    assert info.value.code == 0
