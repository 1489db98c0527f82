"""Synthetic ground-truth property functions and grid datasets.

Both targets are written with torch ops so the same code serves training
data generation, the brute-force grid oracles, and gradient-based probes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .diffnet import DTYPE, Tensor, as_batch
from .model import LabelledDataset


class RosenbrockTarget:
    """Fourth root of a rescaled Rosenbrock bowl.

    f(x) = ((1 - 10 x1)^2 + 100 (10 (x2 - x1^2))^2)^(1/4), a single
    minimum of 0 at (0.1, 0.01).
    """

    minimum = (0.1, 0.01)
    name = "rosenbrock"

    def __call__(self, x) -> Tensor:
        batch, single = as_batch(x, 2, "x")
        x1, x2 = batch[:, 0], batch[:, 1]
        val = ((1.0 - 10.0 * x1) ** 2 + 100.0 * (10.0 * (x2 - x1 ** 2)) ** 2) ** 0.25
        return val[0] if single else val


class GaussianMixtureTarget:
    """Negated two-Gaussian mixture: two strict minima at the means."""

    name = "gauss2"

    def __init__(self, mu1=(-0.2, -0.2), mu2=(0.2, 0.2), var: float = 0.02):
        self.mu1 = torch.as_tensor(mu1, dtype=DTYPE)
        self.mu2 = torch.as_tensor(mu2, dtype=DTYPE)
        self.var = float(var)

    def _density(self, x: Tensor, mu: Tensor) -> Tensor:
        d = x.shape[1]
        norm = (2.0 * math.pi * self.var) ** (d / 2.0)
        sq = ((x - mu) ** 2).sum(dim=1)
        return torch.exp(-0.5 * sq / self.var) / norm

    def __call__(self, x) -> Tensor:
        batch, single = as_batch(x, 2, "x")
        val = -0.5 * (self._density(batch, self.mu1) + self._density(batch, self.mu2))
        return val[0] if single else val


def rosenbrock_eval(x) -> Tensor:
    return RosenbrockTarget()(x)


def gauss2_eval(x) -> Tensor:
    return GaussianMixtureTarget()(x)


TARGETS = {
    "rosenbrock": RosenbrockTarget,
    "gauss2": GaussianMixtureTarget,
}


def make_target(name: str):
    try:
        return TARGETS[name]()
    except KeyError:
        raise ValueError(f"unknown target {name!r}; expected one of {sorted(TARGETS)}")


@dataclass
class GridSpec:
    """Inclusive-endpoint lattice, the same [lo, hi] range per dimension."""

    lo: float = -0.4
    hi: float = 0.4
    m: int = 40
    dim: int = 2

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("lo must be below hi")
        if self.m < 2 or self.dim < 1:
            raise ValueError("need m >= 2 points and dim >= 1")

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / (self.m - 1)

    def axis(self) -> Tensor:
        return torch.linspace(self.lo, self.hi, self.m, dtype=DTYPE)

    def points(self) -> Tensor:
        """All lattice points, row-major (last coordinate fastest)."""
        axes = [self.axis() for _ in range(self.dim)]
        mesh = torch.meshgrid(*axes, indexing="ij")
        return torch.stack([m.reshape(-1) for m in mesh], dim=1)


def grid_dataset(spec: GridSpec, target) -> LabelledDataset:
    X = spec.points()
    y = target(X)
    return LabelledDataset(X, y)


def dataset_to_csv(dataset: LabelledDataset, path) -> None:
    d = dataset.dim
    header = ",".join(f"x{i + 1}" for i in range(d)) + ",y"
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for i in range(dataset.n):
            row = [f"{float(v):.17g}" for v in dataset.X[i]]
            row.append(f"{float(dataset.y[i]):.17g}")
            fh.write(",".join(row) + "\n")


def dataset_from_csv(path) -> LabelledDataset:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if not header or header[-1] != "y" or not all(
                c == f"x{i + 1}" for i, c in enumerate(header[:-1])):
            raise ValueError(f"unexpected dataset header {header!r}")
        xs, ys = [], []
        for line in fh:
            if not line.strip():
                continue
            vals = [float(v) for v in line.split(",")]
            xs.append(vals[:-1])
            ys.append(vals[-1])
    return LabelledDataset(torch.tensor(xs, dtype=DTYPE), torch.tensor(ys, dtype=DTYPE))
