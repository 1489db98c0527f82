"""Model persistence and curve export.

Archives are plain JSON with explicit shape metadata. Raw (unconstrained)
parameters are stored as float lists; Python's shortest-repr float
serialisation makes save/load bit-exact, and sorted keys with fixed
separators make equal models produce byte-identical files.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np
import torch

from .diffnet import DTYPE
from .model import CycleVae, InvexModel, TrainConfig

FORMAT_VERSION = 1


class ArchiveError(RuntimeError):
    pass


class VersionMismatchError(ArchiveError):
    pass


class MalformedArchiveError(ArchiveError):
    pass


class MissingFieldError(ArchiveError):
    pass


@dataclass
class ModelArchive:
    """In-memory form of a stored model."""

    format_version: int
    kind: str
    architecture: dict
    params: dict
    train_config: dict | None = None
    seed: int | None = None


def _architecture_of(model) -> dict:
    if isinstance(model, InvexModel):
        return {"input_dim": model.input_dim,
                "flow_layers": model.flow_layers,
                "flow_hidden": model.flow_hidden,
                "icnn_widths": list(model.icnn_widths)}
    if isinstance(model, CycleVae):
        return {"input_dim": model.input_dim,
                "latent_dim": model.latent_dim,
                "hidden": list(model.hidden),
                "property_hidden": list(model.property_hidden)}
    raise ArchiveError(f"cannot archive model type {type(model).__name__}")


def _build_from_architecture(kind: str, arch: dict):
    gen = torch.Generator().manual_seed(0)  # placeholder init, overwritten by load
    try:
        if kind == "invex":
            return InvexModel(arch["input_dim"], flow_layers=arch["flow_layers"],
                              flow_hidden=arch["flow_hidden"],
                              icnn_widths=tuple(arch["icnn_widths"]), generator=gen)
        if kind == "cycle-baseline":
            return CycleVae(arch["input_dim"], arch["latent_dim"],
                            hidden=tuple(arch["hidden"]),
                            property_hidden=tuple(arch["property_hidden"]),
                            generator=gen)
    except KeyError as e:
        raise MissingFieldError(f"architecture record lacks field {e}") from e
    raise MalformedArchiveError(f"unknown model kind {kind!r}")


def save_model(model, path, *, train_config: TrainConfig | None = None,
               seed: int | None = None) -> None:
    params = {}
    for name, t in model.state_dict().items():
        params[name] = {"shape": list(t.shape), "data": t.reshape(-1).tolist()}
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "architecture": _architecture_of(model),
        "params": params,
        "train_config": None if train_config is None else dataclasses.asdict(train_config),
        "seed": seed,
    }
    text = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    with open(path, "w") as fh:
        fh.write(text)


def load_model(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise MalformedArchiveError(f"not a valid archive: {e}") from e
    if not isinstance(doc, dict):
        raise MalformedArchiveError("archive root must be an object")
    for key in ("format_version", "kind", "architecture", "params"):
        if key not in doc:
            raise MissingFieldError(f"archive lacks field {key!r}")
    if doc["format_version"] != FORMAT_VERSION:
        raise VersionMismatchError(
            f"archive format {doc['format_version']} != supported {FORMAT_VERSION}")
    model = _build_from_architecture(doc["kind"], doc["architecture"])
    state = {}
    expected = model.state_dict()
    for name, t in expected.items():
        if name not in doc["params"]:
            raise MissingFieldError(f"archive lacks parameter {name!r}")
        rec = doc["params"][name]
        try:
            tensor = torch.tensor(rec["data"], dtype=DTYPE).reshape(rec["shape"])
        except (KeyError, TypeError, RuntimeError) as e:
            raise MalformedArchiveError(f"parameter {name!r} is malformed: {e}") from e
        if list(tensor.shape) != list(t.shape):
            raise MalformedArchiveError(
                f"parameter {name!r} has shape {list(tensor.shape)}, "
                f"expected {list(t.shape)}")
        state[name] = tensor
    model.load_state_dict(state)
    return model


def load_train_config(path) -> TrainConfig | None:
    """Recover the training config stored alongside a model, if any."""
    with open(path) as fh:
        doc = json.load(fh)
    cfg = doc.get("train_config")
    if cfg is None:
        return None
    cfg = dict(cfg)
    cfg["z_box"] = tuple(cfg["z_box"])
    return TrainConfig(**cfg)


def save_load_roundtrip(model, path):
    """Persist and re-read a model; the result evaluates bit-identically."""
    save_model(model, path)
    return load_model(path)


# ---------------------------------------------------------------------------
# curve export

def _curve_columns(points) -> tuple[list[str], np.ndarray]:
    x = points.inputs.detach().numpy()
    z = points.latent.detach().numpy()
    d = x.shape[1]
    vals = points.values.detach().numpy()
    cols = [f"x{i + 1}" for i in range(d)] + [f"z{i + 1}" for i in range(d)]
    cols += ["r", "theta"]
    cols += [f"phi{i + 1}" for i in range(points.latitudes.shape[1])]
    cols += ["F"]
    mat = np.column_stack([x, z, points.radii, points.azimuth,
                           points.latitudes, vals])
    return cols, mat


def export_curve(points, path, fmt: str = "csv", *,
                 box: tuple[float, float] | None = None) -> None:
    """Write a level-set point set as CSV (full columns) or SVG polyline."""
    if points.inputs.shape[0] == 0:
        raise ValueError("no points to export")
    if fmt == "csv":
        cols, mat = _curve_columns(points)
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for row in mat:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
        return
    if fmt == "svg":
        _write_svg(points, path, box)
        return
    raise ValueError(f"unknown export format {fmt!r}")


def read_curve(path) -> tuple[list[str], np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [[float(v) for v in line.split(",")] for line in fh if line.strip()]
    return header, np.asarray(rows, dtype=np.float64)


def _write_svg(points, path, box) -> None:
    pts = points.inputs.detach().numpy()
    if pts.shape[1] != 2:
        raise ValueError("SVG export is 2-D only")
    if box is None:
        lo = float(pts.min()) - 0.05
        hi = float(pts.max()) + 0.05
    else:
        lo, hi = box
    size, margin = 480.0, 40.0
    span = hi - lo

    def to_px(v: float) -> float:
        return margin + (v - lo) / span * (size - 2 * margin)

    coords = " ".join(
        f"{to_px(p[0]):.2f},{size - to_px(p[1]):.2f}" for p in pts)
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size:.0f}" '
        f'height="{size:.0f}" viewBox="0 0 {size:.0f} {size:.0f}">',
        f'<rect x="{margin}" y="{margin}" width="{size - 2 * margin}" '
        f'height="{size - 2 * margin}" fill="white" stroke="black"/>',
        f'<polyline points="{coords}" fill="none" stroke="crimson" '
        f'stroke-width="1.5"/>',
        f'<text x="{margin}" y="{size - 10}" font-size="12">'
        f'[{lo:.3g}, {hi:.3g}] level {points.alpha:.6g}</text>',
        "</svg>",
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
