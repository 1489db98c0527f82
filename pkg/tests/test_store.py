"""Archive save/load fidelity, error diagnostics, and curve export."""

import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest
import torch

from invexlevel.diffnet import DTYPE
from invexlevel.levelset import LevelSetPoints, levelset_sample
from invexlevel.model import CycleVae, InvexModel, TrainConfig
from invexlevel.store import (
    FORMAT_VERSION,
    MalformedArchiveError,
    MissingFieldError,
    VersionMismatchError,
    export_curve,
    load_model,
    load_train_config,
    read_curve,
    save_load_roundtrip,
    save_model,
)
from invexlevel.verify import _randomise_flow


def small_invex(seed: int) -> InvexModel:
    gen = torch.Generator().manual_seed(seed)
    model = InvexModel(2, flow_layers=2, flow_hidden=16, icnn_widths=(24, 24),
                      generator=gen)
    _randomise_flow(model.flow, gen)
    return model


def small_baseline(seed: int) -> CycleVae:
    gen = torch.Generator().manual_seed(seed)
    return CycleVae(2, hidden=(32, 32), property_hidden=(32,), generator=gen)


class QuadraticModel:
    """Stub with property |z|^2, encode(x) = x/2, decode(z) = 2z."""

    exact_inverse = True
    latent_dim = 2
    input_dim = 2

    def property_latent(self, z):
        return (z ** 2).sum(dim=1)

    def encode_mean(self, x):
        return 0.5 * x

    def decode_mean(self, z):
        return 2.0 * z


# ---------------------------------------------------------------------------
# save / load

def test_invex_roundtrip_identical_values(tmp_path):
    model = small_invex(3)
    path = tmp_path / "m.arc"
    save_model(model, path)
    loaded = load_model(path)
    x = torch.randn(100, 2, dtype=DTYPE,
                    generator=torch.Generator().manual_seed(9))
    with torch.no_grad():
        assert torch.equal(loaded.property_value(x), model.property_value(x))
        assert torch.equal(loaded.decode_mean(x), model.decode_mean(x))


def test_baseline_roundtrip_identical_values(tmp_path):
    model = small_baseline(4)
    path = tmp_path / "b.arc"
    loaded = save_load_roundtrip(model, path)
    assert loaded.kind == "cycle-baseline"
    x = torch.randn(50, 2, dtype=DTYPE,
                    generator=torch.Generator().manual_seed(1))
    with torch.no_grad():
        assert torch.equal(loaded.property_value(x), model.property_value(x))


def test_roundtrip_state_dict_bitwise(tmp_path):
    model = small_invex(5)
    loaded = save_load_roundtrip(model, tmp_path / "m.arc")
    for name, t in model.state_dict().items():
        assert torch.equal(loaded.state_dict()[name], t), name


def test_resave_byte_identical(tmp_path):
    model = small_invex(6)
    p1, p2 = tmp_path / "a.arc", tmp_path / "b.arc"
    save_model(model, p1, train_config=TrainConfig(epochs=3), seed=6)
    save_model(model, p2, train_config=TrainConfig(epochs=3), seed=6)
    assert p1.read_bytes() == p2.read_bytes()


def test_train_config_roundtrip(tmp_path):
    cfg = TrainConfig(epochs=7, seed=11, gamma=0.02)
    path = tmp_path / "m.arc"
    save_model(small_invex(0), path, train_config=cfg, seed=11)
    back = load_train_config(path)
    assert back == cfg
    assert isinstance(back.z_box, tuple)


def test_train_config_absent_is_none(tmp_path):
    path = tmp_path / "m.arc"
    save_model(small_invex(0), path)
    assert load_train_config(path) is None


# ---------------------------------------------------------------------------
# archive diagnostics

def _archive_doc(tmp_path):
    path = tmp_path / "m.arc"
    save_model(small_invex(1), path)
    with open(path) as fh:
        return path, json.load(fh)


def test_version_mismatch_detected(tmp_path):
    path, doc = _archive_doc(tmp_path)
    doc["format_version"] = FORMAT_VERSION + 1
    path.write_text(json.dumps(doc))
    with pytest.raises(VersionMismatchError):
        load_model(path)


def test_truncated_file_is_malformed(tmp_path):
    path, _ = _archive_doc(tmp_path)
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(MalformedArchiveError):
        load_model(path)


def test_non_object_root_is_malformed(tmp_path):
    path = tmp_path / "m.arc"
    path.write_text("[1, 2, 3]")
    with pytest.raises(MalformedArchiveError):
        load_model(path)


def test_missing_top_level_field(tmp_path):
    path, doc = _archive_doc(tmp_path)
    del doc["params"]
    path.write_text(json.dumps(doc))
    with pytest.raises(MissingFieldError):
        load_model(path)


def test_missing_parameter(tmp_path):
    path, doc = _archive_doc(tmp_path)
    name = next(iter(doc["params"]))
    del doc["params"][name]
    path.write_text(json.dumps(doc))
    with pytest.raises(MissingFieldError, match=name):
        load_model(path)


def test_malformed_parameter_payload(tmp_path):
    path, doc = _archive_doc(tmp_path)
    name = next(iter(doc["params"]))
    doc["params"][name] = {"shape": [2, 2], "data": "bogus"}
    path.write_text(json.dumps(doc))
    with pytest.raises(MalformedArchiveError):
        load_model(path)


def test_wrong_parameter_shape(tmp_path):
    path, doc = _archive_doc(tmp_path)
    name = next(iter(doc["params"]))
    doc["params"][name] = {"shape": [1], "data": [0.0]}
    path.write_text(json.dumps(doc))
    with pytest.raises(MalformedArchiveError, match="shape"):
        load_model(path)


def test_unknown_kind_is_malformed(tmp_path):
    path, doc = _archive_doc(tmp_path)
    doc["kind"] = "mystery"
    path.write_text(json.dumps(doc))
    with pytest.raises(MalformedArchiveError):
        load_model(path)


# ---------------------------------------------------------------------------
# curve export

def _unit_circle_points():
    return levelset_sample(QuadraticModel(), 1.0, 8,
                           z_star=torch.zeros(2, dtype=DTYPE))


def test_export_csv_header_and_row_count(tmp_path):
    points = _unit_circle_points()
    path = tmp_path / "c.csv"
    export_curve(points, path, "csv")
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "x1,x2,z1,z2,r,theta,F"
    assert len(lines) == 1 + 8


def test_export_csv_reimport_matches(tmp_path):
    points = _unit_circle_points()
    path = tmp_path / "c.csv"
    export_curve(points, path, "csv")
    header, mat = read_curve(path)
    x = points.inputs.detach().numpy()
    assert np.abs(mat[:, 0:2] - x).max() <= 1e-12
    assert np.abs(mat[:, 4] - points.radii).max() <= 1e-12
    vals = points.values.detach().numpy()
    assert np.abs(mat[:, 6] - vals).max() <= 1e-12


def test_export_svg_parses(tmp_path):
    points = _unit_circle_points()
    path = tmp_path / "c.svg"
    export_curve(points, path, "svg", box=(-2.5, 2.5))
    text = path.read_text()
    assert text.startswith("<svg")
    root = ET.fromstring(text)
    tags = {child.tag.split("}")[-1] for child in root}
    assert "polyline" in tags


def test_export_empty_points_rejected(tmp_path):
    empty = LevelSetPoints(
        alpha=1.0,
        latent=torch.zeros((0, 2), dtype=DTYPE),
        inputs=torch.zeros((0, 2), dtype=DTYPE),
        radii=np.zeros(0),
        azimuth=np.zeros(0),
        latitudes=np.zeros((0, 0)),
        values=torch.zeros(0, dtype=DTYPE),
    )
    with pytest.raises(ValueError):
        export_curve(empty, tmp_path / "c.csv", "csv")


def test_export_unknown_format_rejected(tmp_path):
    with pytest.raises(ValueError):
        export_curve(_unit_circle_points(), tmp_path / "c.bin", "parquet")


def test_svg_export_requires_2d(tmp_path):
    pts3 = LevelSetPoints(
        alpha=1.0,
        latent=torch.zeros((4, 3), dtype=DTYPE),
        inputs=torch.zeros((4, 3), dtype=DTYPE),
        radii=np.ones(4),
        azimuth=np.zeros(4),
        latitudes=np.zeros((4, 1)),
        values=torch.ones(4, dtype=DTYPE),
    )
    with pytest.raises(ValueError):
        export_curve(pts3, tmp_path / "c.svg", "svg")
