"""Command-line surface: config echo, artifact writing, error reporting.

Output is captured with redirect_stdout rather than pytest's capture so the
tests behave the same under `pytest -s`.
"""

import contextlib
import io
import json

import pytest
import torch

from invexlevel.cli import main
from invexlevel.diffnet import DTYPE
from invexlevel.levelset import find_minimum
from invexlevel.model import InvexModel
from invexlevel.store import read_curve, save_model
from invexlevel.verify import _randomise_flow


def run_cli(argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main(argv)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture(scope="module")
def toy_archive(tmp_path_factory):
    """Small coercive model archive plus its minimum value."""
    gen = torch.Generator().manual_seed(12)
    model = InvexModel(2, flow_layers=2, flow_hidden=16, icnn_widths=(24, 24),
                      generator=gen)
    _randomise_flow(model.flow, gen)
    with torch.no_grad():
        model.icnn.wz_out.zero_()
    path = tmp_path_factory.mktemp("cli") / "toy.arc"
    save_model(model, path)
    z_star = find_minimum(model.property_latent,
                          torch.zeros(2, dtype=DTYPE))
    with torch.no_grad():
        f_star = float(model.property_latent(z_star.reshape(1, -1))[0])
    return str(path), f_star


def test_config_echo_line(tmp_path):
    code, out, _ = run_cli(["export", "--target", "rosenbrock", "--grid", "3",
                            "--out", str(tmp_path / "d.csv")])
    assert code == 0
    first = out.splitlines()[0]
    assert first.startswith("config: export ")
    opts = json.loads(first.split("config: export ", 1)[1])
    assert opts["grid"] == 3 and opts["target"] == "rosenbrock"


def test_export_dataset_rows(tmp_path):
    path = tmp_path / "d.csv"
    code, out, _ = run_cli(["export", "--target", "gauss2", "--grid", "5",
                            "--out", str(path)])
    assert code == 0
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "x1,x2,y"
    assert len(lines) == 1 + 25


def test_export_oracle_curve(tmp_path):
    path = tmp_path / "c.csv"
    code, out, _ = run_cli(["export", "--target", "rosenbrock",
                            "--alpha", "1.0", "--grid", "60",
                            "--out", str(path)])
    assert code == 0
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "x1,x2"
    assert len(lines) > 10


def test_levelset_rows_on_level(toy_archive, tmp_path):
    arc, f_star = toy_archive
    alpha = f_star + 1.0
    path = tmp_path / "c.csv"
    code, out, _ = run_cli(["levelset", "--model", arc,
                            "--alpha", f"{alpha!r}", "--samples", "64",
                            "--out", str(path)])
    assert code == 0
    header, mat = read_curve(path)
    assert mat.shape[0] == 64
    f_col = header.index("F")
    assert (abs(mat[:, f_col] - alpha) <= 1e-6 * (1 + abs(alpha))).all()


def test_levelset_svg_artifact(toy_archive, tmp_path):
    arc, f_star = toy_archive
    svg = tmp_path / "c.svg"
    code, _, _ = run_cli(["levelset", "--model", arc,
                          "--alpha", f"{f_star + 0.5!r}", "--samples", "16",
                          "--out", str(tmp_path / "c.csv"), "--svg", str(svg)])
    assert code == 0
    assert svg.read_text().startswith("<svg")


def test_levelset_unreachable_names_error(toy_archive, tmp_path):
    arc, f_star = toy_archive
    code, _, err = run_cli(["levelset", "--model", arc,
                            "--alpha", f"{f_star - 1.0!r}",
                            "--out", str(tmp_path / "c.csv")])
    assert code == 1
    assert "error: LevelNotReachable" in err


def test_minimize_prints_location(toy_archive):
    arc, f_star = toy_archive
    code, out, _ = run_cli(["minimize", "--model", arc])
    assert code == 0
    assert "z* = [" in out and "F(z*) =" in out
    printed = float(out.rsplit("F(z*) =", 1)[1].strip())
    assert abs(printed - f_star) <= 1e-9 * (1 + abs(f_star))


def test_minimize_box_flag(toy_archive):
    arc, _ = toy_archive
    code, out, _ = run_cli(["minimize", "--model", arc,
                            "--box=-0.1,0.1,-0.1,0.1"])
    assert code == 0
    z_line = out.splitlines()[-3]
    vals = [float(v) for v in z_line.split("[")[1].rstrip("]").split(",")]
    assert all(-0.1 - 1e-12 <= v <= 0.1 + 1e-12 for v in vals)


def test_interpolate_path(toy_archive, tmp_path):
    arc, f_star = toy_archive
    alpha = f_star + 1.0
    curve = tmp_path / "c.csv"
    run_cli(["levelset", "--model", arc, "--alpha", f"{alpha!r}",
             "--samples", "16", "--out", str(curve)])
    _, mat = read_curve(curve)
    a = [float(v) for v in mat[0, 0:2]]
    b = [float(v) for v in mat[5, 0:2]]
    path = tmp_path / "p.csv"
    code, out, _ = run_cli([
        "interpolate", "--model", arc, "--alpha", f"{alpha!r}",
        f"--from={a[0]!r},{a[1]!r}", f"--to={b[0]!r},{b[1]!r}",
        "--steps", "8", "--out", str(path)])
    assert code == 0
    header, pmat = read_curve(path)
    assert pmat.shape[0] == 8
    f_col = header.index("F")
    assert (abs(pmat[:, f_col] - alpha) <= 1e-6 * (1 + abs(alpha))).all()
    assert abs(pmat[0, 0:2] - a).max() == 0.0
    assert abs(pmat[-1, 0:2] - b).max() == 0.0


def test_verify_selected_suites(tmp_path):
    report = tmp_path / "v.json"
    code, out, _ = run_cli(["verify", "--suite", "roundtrip",
                            "--suite", "oracle", "--report", str(report)])
    assert code == 0
    assert "[pass]" in out
    doc = json.loads(report.read_text())
    assert all(entry["passed"] for entry in doc)
    names = {entry["name"] for entry in doc}
    assert any("roundtrip" in n for n in names)


def test_missing_model_file_reports_error(tmp_path):
    code, _, err = run_cli(["minimize", "--model",
                            str(tmp_path / "missing.arc")])
    assert code == 1
    assert err.startswith("error: ")


def test_bad_point_syntax_reports_error(toy_archive, tmp_path):
    arc, f_star = toy_archive
    code, _, err = run_cli([
        "interpolate", "--model", arc, "--alpha", f"{f_star + 1.0!r}",
        "--from", "oops", "--to", "0,1", "--out", str(tmp_path / "p.csv")])
    assert code == 1
    assert "error: ValueError" in err


def test_unknown_subcommand_rejected():
    with pytest.raises(SystemExit):
        run_cli(["frobnicate"])


def test_train_tiny_run_writes_archive(tmp_path):
    arc = tmp_path / "m.arc"
    report = tmp_path / "loss.csv"
    code, out, _ = run_cli(["train", "--target", "rosenbrock",
                            "--model", "invex", "--seed", "3",
                            "--epochs", "2", "--out", str(arc),
                            "--report", str(report)])
    assert code == 0
    assert arc.exists()
    lines = report.read_text().strip().split("\n")
    assert lines[0].startswith("epoch,")
    assert len(lines) == 1 + 2
    assert f"archive written to {arc}" in out


def test_train_rerun_is_byte_identical(tmp_path):
    a1, a2 = tmp_path / "m1.arc", tmp_path / "m2.arc"
    for path in (a1, a2):
        code, _, _ = run_cli(["train", "--target", "gauss2",
                              "--model", "cycle-baseline", "--seed", "5",
                              "--epochs", "1", "--out", str(path)])
        assert code == 0
    assert a1.read_bytes() == a2.read_bytes()


def test_levelset_box_restriction(toy_archive, tmp_path):
    path, f_star = toy_archive
    alpha = f_star + 1.0
    out = tmp_path / "c.csv"
    code, text, _ = run_cli(["levelset", "--model", path,
                             "--alpha", str(alpha), "--samples", "32",
                             "--box=-6,6,-6,6", "--out", str(out)])
    assert code == 0
    header, rows = read_curve(str(out))
    assert 1 <= len(rows) <= 32
    fcol = header.index("F")
    for row in rows:
        assert abs(row[fcol] - alpha) <= 1e-6 * (1.0 + abs(alpha))


def test_levelset_box_dim_mismatch_fails(toy_archive, tmp_path):
    path, f_star = toy_archive
    code, _, err = run_cli(["levelset", "--model", path,
                            "--alpha", str(f_star + 1.0),
                            "--box=-6,6,-6,6,-6,6",
                            "--out", str(tmp_path / "c.csv")])
    assert code == 1
    assert "error: " in err
