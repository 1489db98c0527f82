"""Independent brute-force oracles and property probes.

Nothing here trusts the analytic machinery it checks: contours come from
marching squares on a dense grid, gradients from central differences,
convexity and stationarity from direct sampling. The probes return plain
verdicts so the CLI can emit a machine-readable report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy.spatial import cKDTree

from .diffnet import DTYPE, Tensor, backward
from .levelset import (
    STATUS_GRADIENT,
    STATUS_STALLED,
    SubspaceBox,
    _descend,
)
from .targets import GridSpec


@dataclass
class OracleCurve:
    """Unordered point cloud of a level curve from grid sign changes."""

    points: np.ndarray  # [m, 2]
    alpha: float
    grid: GridSpec

    @property
    def size(self) -> int:
        return self.points.shape[0]


def oracle_level_points(target_fn, alpha: float, grid: GridSpec) -> OracleCurve:
    """Marching-squares edge crossings of target_fn = alpha.

    Each sign change along a grid edge contributes one point by linear
    interpolation; grid nodes exactly on the level are kept as-is. An
    alpha outside the grid's value range yields an empty cloud.
    """
    if grid.dim != 2:
        raise ValueError("the contour oracle is 2-D only")
    with torch.no_grad():
        vals = target_fn(grid.points()).numpy().reshape(grid.m, grid.m)
    ax = grid.axis().numpy()
    G = vals - alpha
    pts = []

    exact_i, exact_j = np.nonzero(G == 0.0)
    if exact_i.size:
        pts.append(np.column_stack([ax[exact_i], ax[exact_j]]))

    # edges along axis 0 (x1 varies)
    ii, jj = np.nonzero(G[:-1, :] * G[1:, :] < 0.0)
    if ii.size:
        t = G[ii, jj] / (G[ii, jj] - G[ii + 1, jj])
        pts.append(np.column_stack([ax[ii] + t * grid.spacing, ax[jj]]))

    # edges along axis 1 (x2 varies)
    ii, jj = np.nonzero(G[:, :-1] * G[:, 1:] < 0.0)
    if ii.size:
        t = G[ii, jj] / (G[ii, jj] - G[ii, jj + 1])
        pts.append(np.column_stack([ax[ii], ax[jj] + t * grid.spacing]))

    points = np.concatenate(pts, axis=0) if pts else np.zeros((0, 2))
    return OracleCurve(points=points, alpha=alpha, grid=grid)


def hausdorff(A, B) -> float:
    """Symmetric Hausdorff distance between two point clouds."""
    a = np.asarray(A, dtype=np.float64)
    b = np.asarray(B, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("hausdorff needs two non-empty point clouds")
    d_ab = cKDTree(b).query(a)[0].max()
    d_ba = cKDTree(a).query(b)[0].max()
    return float(max(d_ab, d_ba))


def convexity_probe(f, dim: int, trials: int, *, seed: int = 0,
                    lam_range: tuple[float, float] = (0.1, 0.9)) -> float:
    """Minimum strictness margin lam*f(z1) + (1-lam)*f(z2) - f(mix) over
    random triples; positive means strictly convex on the sampled pairs."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    z1 = torch.as_tensor(rng.standard_normal((trials, dim)), dtype=DTYPE)
    z2 = torch.as_tensor(rng.standard_normal((trials, dim)), dtype=DTYPE)
    lam = torch.as_tensor(rng.uniform(*lam_range, size=trials), dtype=DTYPE)
    with torch.no_grad():
        f1 = f(z1)
        f2 = f(z2)
        fm = f(lam.unsqueeze(1) * z1 + (1.0 - lam.unsqueeze(1)) * z2)
    margin = lam * f1 + (1.0 - lam) * f2 - fm
    return float(margin.min())


@dataclass
class StationaryReport:
    """Clustered terminal points of a multistart descent."""

    points: Tensor            # [S, d]
    values: Tensor            # [S]
    statuses: list[str]
    labels: np.ndarray        # [S] cluster index, -1 for unfinished runs
    merge_radius: float

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max()) + 1 if (self.labels >= 0).any() else 0

    @property
    def converged(self) -> np.ndarray:
        return np.array([s == STATUS_GRADIENT for s in self.statuses])

    def cluster_best(self) -> list[float]:
        best = []
        for c in range(self.n_clusters):
            vals = self.values.numpy()[self.labels == c]
            best.append(float(vals.min()))
        return best


def multistart_stationary(F, box: SubspaceBox, starts: int = 100,
                          merge_radius: float = 1e-2, *, seed: int = 0,
                          gtol: float = 1e-8,
                          max_iter: int = 100000) -> StationaryReport:
    """Descend from many random starts in the box and cluster the results.

    Rows stopping on the gradient rule or on step collapse (no further
    float-size progress possible) both count as terminal minima; runs
    hitting the iteration cap are recorded unclustered, not fatal.
    """
    if starts < 2:
        raise ValueError("starts must be >= 2")
    rng = np.random.default_rng(seed)
    Z0 = box.sample(starts, rng)
    res = _descend(F, Z0, gtol=gtol, max_iter=max_iter)
    labels = np.full(starts, -1, dtype=np.int64)
    reps: list[Tensor] = []
    for i in range(starts):
        if res.status[i] not in (STATUS_GRADIENT, STATUS_STALLED):
            continue
        z = res.z[i]
        for c, rep in enumerate(reps):
            if float((z - rep).norm()) <= merge_radius:
                labels[i] = c
                break
        else:
            labels[i] = len(reps)
            reps.append(z)
    return StationaryReport(points=res.z.detach(), values=res.value.detach(),
                            statuses=res.status, labels=labels,
                            merge_radius=merge_radius)


def fd_grad_check(op, point, step: float = 1e-5) -> float:
    """Max relative disagreement between reverse-mode and central-difference
    gradients at one point, scaled by 1 + |analytic gradient|."""
    if step <= 0:
        raise ValueError("step must be positive")
    x = torch.as_tensor(point, dtype=DTYPE).reshape(-1)
    analytic = backward(lambda t: op(t), x).gradients[0]
    fd = torch.zeros_like(x)
    with torch.no_grad():
        for i in range(x.shape[0]):
            e = torch.zeros_like(x)
            e[i] = step
            fd[i] = (op(x + e) - op(x - e)) / (2.0 * step)
    rel = (analytic - fd).abs() / (1.0 + analytic.abs())
    return float(rel.max())


# ---------------------------------------------------------------------------
# probe suite for the CLI

@dataclass
class ProbeVerdict:
    name: str
    value: float
    threshold: float
    passed: bool

    def as_dict(self) -> dict:
        return {"name": self.name, "value": self.value,
                "threshold": self.threshold, "passed": self.passed}


PROBE_SUITES = ("grad", "convexity", "invert", "roundtrip", "oracle", "multistart")


def run_probes(suites=None, *, seed: int = 0) -> list[ProbeVerdict]:
    """Self-contained probe battery over freshly initialised networks and
    the synthetic targets; returns one verdict per check."""
    from .diffnet import AutoregressiveFlow, Icnn, MonotoneHead
    from .levelset import cart_to_sph, sph_to_cart
    from .targets import gauss2_eval, rosenbrock_eval

    chosen = PROBE_SUITES if suites is None else tuple(suites)
    unknown = set(chosen) - set(PROBE_SUITES)
    if unknown:
        raise ValueError(f"unknown probe suites {sorted(unknown)}")
    out: list[ProbeVerdict] = []
    gen = torch.Generator().manual_seed(seed)

    if "grad" in chosen:
        worst = 0.0
        rng = np.random.default_rng(seed)
        for _ in range(5):
            flow = AutoregressiveFlow(2, generator=gen)
            _randomise_flow(flow, gen)
            icnn = Icnn(2, (32, 32), generator=gen)
            head = MonotoneHead()
            comp = lambda x: head(icnn(flow(x.reshape(1, -1)))).squeeze()
            pt = rng.uniform(-0.4, 0.4, size=2)
            worst = max(worst, fd_grad_check(comp, pt))
        out.append(ProbeVerdict("grad.fd_max_rel_err", worst, 1e-5, worst <= 1e-5))

    if "convexity" in chosen:
        worst = math.inf
        for k in range(3):
            icnn = Icnn(2, (64, 64), generator=gen)
            worst = min(worst, convexity_probe(icnn, 2, 1000, seed=seed + k))
        out.append(ProbeVerdict("convexity.min_margin", worst, 0.0, worst > 0.0))

    if "invert" in chosen:
        worst = 0.0
        for _ in range(3):
            flow = AutoregressiveFlow(2, generator=gen)
            _randomise_flow(flow, gen)
            x = torch.randn(200, 2, dtype=DTYPE, generator=gen)
            with torch.no_grad():
                err = (flow.inverse(flow(x)) - x).abs().max()
            worst = max(worst, float(err))
        out.append(ProbeVerdict("invert.roundtrip_max_err", worst, 1e-8, worst <= 1e-8))

    if "roundtrip" in chosen:
        rng = np.random.default_rng(seed)
        worst = 0.0
        for n in (2, 3, 8):
            pts = rng.standard_normal((200, n))
            for row in pts:
                back = sph_to_cart(cart_to_sph(row), n)
                worst = max(worst, float(np.abs(back - row).max()))
        out.append(ProbeVerdict("roundtrip.spherical_max_err", worst, 1e-9,
                                worst <= 1e-9))

    if "oracle" in chosen:
        circle = oracle_level_points(lambda x: (x ** 2).sum(dim=1), 1.0,
                                     GridSpec(-2.0, 2.0, 400))
        dev = float(np.abs(np.linalg.norm(circle.points, axis=1) - 1.0).max())
        out.append(ProbeVerdict("oracle.unit_circle_max_dev", dev, 1e-3, dev <= 1e-3))
        h = hausdorff(circle.points, circle.points)
        out.append(ProbeVerdict("oracle.hausdorff_self", h, 0.0, h == 0.0))

    if "multistart" in chosen:
        box = SubspaceBox([-0.4, -0.4], [0.4, 0.4])
        rep_r = multistart_stationary(rosenbrock_eval, box, 40, seed=seed)
        out.append(ProbeVerdict("multistart.rosenbrock_clusters",
                                float(rep_r.n_clusters), 1.0, rep_r.n_clusters == 1))
        rep_g = multistart_stationary(gauss2_eval, box, 40, seed=seed)
        out.append(ProbeVerdict("multistart.gauss2_clusters",
                                float(rep_g.n_clusters), 2.0, rep_g.n_clusters == 2))
    return out


def _randomise_flow(flow, gen: torch.Generator, scale: float = 0.5) -> None:
    """Give the zero-initialised conditioner outputs random weights, for
    probes that need a non-identity bijection.

    Weight noise is scaled by fan-in so the per-dimension log-scales stay
    O(scale) and exp() cannot overflow."""
    with torch.no_grad():
        for layer in flow.layers:
            w = layer.lin2.weight
            fan = w.shape[1]
            w.add_(scale / fan ** 0.5
                   * torch.randn(w.shape, dtype=DTYPE, generator=gen))
            b = layer.lin2.bias
            b.add_(0.1 * scale * torch.randn(b.shape, dtype=DTYPE, generator=gen))
