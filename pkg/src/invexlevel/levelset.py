"""Global level-set machinery in latent space.

A strictly quasi-convex property map has one minimum z* and compact,
connected level sets, so every level point is reachable from z* along a
ray: hyperspherical coordinates about z* turn the level set into a graph
r = gamma(angles). The ops here find z*, solve the per-direction radius,
sample whole level sets, and interpolate on them, mapping results back to
input space through the exact flow inverse.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
import torch

from .diffnet import DTYPE, Tensor, as_batch, backward


class LevelSetError(RuntimeError):
    pass


class LevelNotReachable(LevelSetError):
    """Requested level lies at or below the function minimum."""


class LevelBeyondRange(LevelSetError):
    """Radius bracketing exceeded r_max without crossing the level."""


class ConvergenceError(LevelSetError):
    """An iterative search hit its cap without meeting its tolerance."""


class EndpointOffLevel(LevelSetError):
    """Interpolation endpoint does not lie on the requested level."""


# ---------------------------------------------------------------------------
# hyperspherical coordinates

_TRIG_SNAP = 1e-15  # cos/sin values this close to zero are exact-axis cases


@dataclass(frozen=True)
class SphericalPoint:
    """radius >= 0, latitudes in [0, pi] (n-2 of them), azimuth in [0, 2*pi)."""

    radius: float
    latitudes: tuple[float, ...]
    azimuth: float
    degenerate: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.radius) and self.radius >= 0):
            raise ValueError("radius must be finite and non-negative")
        for lat in self.latitudes:
            if not (0.0 <= lat <= math.pi):
                raise ValueError("latitudes must lie in [0, pi]")
        if not (0.0 <= self.azimuth < 2.0 * math.pi):
            raise ValueError("azimuth must lie in [0, 2*pi)")

    @property
    def dim(self) -> int:
        return len(self.latitudes) + 2

    def angles(self) -> tuple[float, ...]:
        return (*self.latitudes, self.azimuth)


def _snapped_trig(angle: float) -> tuple[float, float]:
    c, s = math.cos(angle), math.sin(angle)
    if abs(c) < _TRIG_SNAP:
        c = 0.0
    if abs(s) < _TRIG_SNAP:
        s = 0.0
    return c, s


def sph_to_cart(p: SphericalPoint, n: int) -> np.ndarray:
    """Forward transform x1 = r cos(phi_1), x2 = r sin(phi_1) cos(phi_2), ...

    Trig values within 1e-15 of zero are snapped so axis-aligned angles
    produce exact axis points; the perturbation is below the round-trip
    tolerance everywhere else.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    if len(p.latitudes) != n - 2:
        raise ValueError(f"expected {n - 2} latitudes for n={n}, got {len(p.latitudes)}")
    x = np.zeros(n)
    running = p.radius
    for k, angle in enumerate(p.angles()):
        c, s = _snapped_trig(angle)
        x[k] = running * c
        running *= s
    x[n - 1] = running
    return x


def cart_to_sph(x) -> SphericalPoint:
    """Inverse transform; the origin gets canonical zero angles and a
    degeneracy flag."""
    v = np.asarray(x, dtype=np.float64).reshape(-1)
    n = v.shape[0]
    if n < 2:
        raise ValueError("need n >= 2")
    if not np.isfinite(v).all():
        raise ValueError("point has non-finite entries")
    suffix = np.sqrt(np.cumsum(v[::-1] ** 2)[::-1])  # suffix[k] = |x[k:]|
    r = float(suffix[0])
    if r == 0.0:
        return SphericalPoint(0.0, (0.0,) * (n - 2), 0.0, degenerate=True)
    lats = []
    for k in range(n - 2):
        if suffix[k] == 0.0:
            lats.append(0.0)
            continue
        ratio = min(1.0, max(-1.0, float(v[k] / suffix[k])))
        lats.append(math.acos(ratio))
    az = math.atan2(float(v[n - 1]), float(v[n - 2]))
    if az < 0.0:
        az += 2.0 * math.pi
    if az >= 2.0 * math.pi:  # guard the wrap landing exactly on 2*pi
        az = 0.0
    return SphericalPoint(r, tuple(lats), az)


def _unit_vector(latitudes, azimuth: float, n: int) -> np.ndarray:
    return sph_to_cart(SphericalPoint(1.0, tuple(latitudes), azimuth), n)


# ---------------------------------------------------------------------------
# minimisation

@dataclass
class SubspaceBox:
    """Compact axis-aligned box in latent space."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64).reshape(-1)
        self.hi = np.asarray(self.hi, dtype=np.float64).reshape(-1)
        if self.lo.shape != self.hi.shape or not (self.lo < self.hi).all():
            raise ValueError("box needs lo < hi componentwise")

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    def lo_t(self) -> Tensor:
        return torch.as_tensor(self.lo, dtype=DTYPE)

    def hi_t(self) -> Tensor:
        return torch.as_tensor(self.hi, dtype=DTYPE)

    def center(self) -> Tensor:
        return torch.as_tensor(0.5 * (self.lo + self.hi), dtype=DTYPE)

    def project(self, z: Tensor) -> Tensor:
        return torch.clamp(z, self.lo_t(), self.hi_t())

    def contains(self, z: Tensor) -> bool:
        zt = torch.as_tensor(z, dtype=DTYPE)
        return bool((zt >= self.lo_t()).all() and (zt <= self.hi_t()).all())

    def sample(self, count: int, rng: np.random.Generator) -> Tensor:
        draw = rng.uniform(self.lo, self.hi, size=(count, self.dim))
        return torch.as_tensor(draw, dtype=DTYPE)


STATUS_GRADIENT = "gradient"
STATUS_STALLED = "stalled"
STATUS_MAXITER = "maxiter"
STATUS_DIVERGED = "diverged"


@dataclass
class DescentResult:
    z: Tensor             # [M, d] terminal points
    value: Tensor         # [M]
    measure: Tensor       # [M] gradient (or projected-gradient) norms
    status: list[str]
    iterations: int


def _reduced_grad(z: Tensor, g: Tensor, box: SubspaceBox | None) -> Tensor:
    if box is None:
        return g
    g = g.clone()
    g[(z <= box.lo_t()) & (g > 0)] = 0.0
    g[(z >= box.hi_t()) & (g < 0)] = 0.0
    return g


def _descend(F, Z0: Tensor, *, gtol: float = 1e-8, max_iter: int = 100000,
             box: SubspaceBox | None = None, armijo_c: float = 1e-4,
             nm_window: int = 10, diverge_below: float = -1e12) -> DescentResult:
    """Batched gradient descent with nonmonotone backtracking (halving).

    Trial steps follow the Barzilai-Borwein rule where the curvature
    estimate is positive, otherwise the last accepted step. The Armijo
    test compares against the largest of the last `nm_window` accepted
    values rather than the current one; a monotone reference rejects most
    BB steps inside ill-conditioned valleys and degrades to a crawl there.
    Rows whose value sinks below `diverge_below` stop with the diverged
    status instead of chasing an unbounded descent to the iteration cap.
    Each row terminates with its own status; callers decide what
    non-gradient termination means.
    """
    Z = torch.as_tensor(Z0, dtype=DTYPE).clone()
    if box is not None:
        Z = box.project(Z)
    M = Z.shape[0]

    def value_grad(z: Tensor) -> tuple[Tensor, Tensor]:
        res = backward(F, z)
        return res.value, res.gradients[0]

    def value_only(z: Tensor) -> Tensor:
        with torch.no_grad():
            return F(z)

    v, g = value_grad(Z)
    g = g.clone()
    measure = _reduced_grad(Z, g, box).norm(dim=1)
    status = [""] * M
    for i in range(M):
        if float(v[i]) < diverge_below:
            status[i] = STATUS_DIVERGED
        elif float(measure[i]) <= gtol:
            status[i] = STATUS_GRADIENT
    alpha = 1.0 / (1.0 + measure)  # per-row trial step
    z_prev = torch.zeros_like(Z)
    g_prev = torch.zeros_like(g)
    have_prev = torch.zeros(M, dtype=torch.bool)
    hist = torch.full((M, nm_window), -math.inf, dtype=DTYPE)
    hist[:, 0] = v
    hist_ptr = torch.ones(M, dtype=torch.long)

    it = 0
    while it < max_iter:
        active = torch.tensor([s == "" for s in status])
        if not active.any():
            break
        it += 1
        idx = active.nonzero(as_tuple=True)[0]
        za, ga, va = Z[idx], g[idx], v[idx]
        f_ref = hist[idx].max(dim=1).values
        atr = alpha[idx].clone()
        # Barzilai-Borwein trial step where a previous step exists
        hp = have_prev[idx]
        if hp.any():
            dz = za - z_prev[idx]
            dg = ga - g_prev[idx]
            curv = (dz * dg).sum(dim=1)
            bb = torch.where(curv > 0, (dz * dz).sum(dim=1) / curv.clamp_min(1e-300),
                             atr * 2.0)
            atr = torch.where(hp, bb.clamp(1e-12, 1e12), atr)

        m = idx.shape[0]
        accepted = torch.zeros(m, dtype=torch.bool)
        stalled = torch.zeros(m, dtype=torch.bool)
        z_new, v_new = za.clone(), va.clone()
        while True:
            pending = ~accepted & ~stalled
            if not pending.any():
                break
            p = pending.nonzero(as_tuple=True)[0]
            zc = za[p] - atr[p].unsqueeze(1) * ga[p]
            if box is not None:
                zc = box.project(zc)
            vc = value_only(zc)
            move = za[p] - zc
            move_sq = (move * move).sum(dim=1)
            needed = armijo_c * move_sq / atr[p]
            ok = torch.isfinite(vc) & (vc <= f_ref[p] - needed) & (move_sq > 0)
            acc_rows = p[ok]
            z_new[acc_rows] = zc[ok]
            v_new[acc_rows] = vc[ok]
            accepted[acc_rows] = True
            rej = p[~ok]
            atr[rej] = atr[rej] * 0.5
            stalled[rej] |= atr[rej] < 1e-18

        for j in stalled.nonzero(as_tuple=True)[0]:
            status[int(idx[j])] = STATUS_STALLED
        acc_idx = idx[accepted]
        if acc_idx.shape[0] == 0:
            continue
        z_prev[acc_idx] = Z[acc_idx]
        g_prev[acc_idx] = g[acc_idx]
        have_prev[acc_idx] = True
        Z[acc_idx] = z_new[accepted]
        v[acc_idx] = v_new[accepted]
        hist[acc_idx, hist_ptr[acc_idx]] = v[acc_idx]
        hist_ptr[acc_idx] = (hist_ptr[acc_idx] + 1) % nm_window
        vg_val, vg_grad = value_grad(Z[acc_idx])
        g[acc_idx] = vg_grad
        alpha[acc_idx] = atr[accepted]
        meas = _reduced_grad(Z[acc_idx], vg_grad, box).norm(dim=1)
        measure[acc_idx] = meas
        for j, row in enumerate(acc_idx):
            if float(v[row]) < diverge_below:
                status[int(row)] = STATUS_DIVERGED
            elif float(meas[j]) <= gtol:
                status[int(row)] = STATUS_GRADIENT

    for i in range(M):
        if status[i] == "":
            status[i] = STATUS_MAXITER
    return DescentResult(z=Z, value=v, measure=measure, status=status, iterations=it)


def find_minimum(prop_fn, start, *, gtol: float = 1e-8,
                 max_iter: int = 100000) -> Tensor:
    """Locate the unique minimum of a strictly quasi-convex map.

    prop_fn maps [M, d] to [M]. Raises ConvergenceError unless the
    gradient-norm stopping rule was met.
    """
    z0 = torch.as_tensor(start, dtype=DTYPE).reshape(1, -1)
    res = _descend(prop_fn, z0, gtol=gtol, max_iter=max_iter)
    if res.status[0] == STATUS_DIVERGED:
        raise ConvergenceError(
            f"descent from {start} passed below {float(res.value[0]):.3e}; "
            "the map appears unbounded below along this trajectory, so no "
            "minimum exists to find")
    if res.status[0] != STATUS_GRADIENT:
        raise ConvergenceError(
            f"minimum search stopped with status {res.status[0]!r}, "
            f"gradient norm {float(res.measure[0]):.3e} > {gtol:.1e}")
    return res.z[0].detach()


def find_minimum_box(prop_fn, box: SubspaceBox, start=None, *, gtol: float = 1e-8,
                     max_iter: int = 100000) -> Tensor:
    """Projected gradient descent onto an axis-aligned box."""
    z0 = box.center() if start is None else torch.as_tensor(start, dtype=DTYPE)
    z0 = box.project(z0.reshape(1, -1))
    res = _descend(prop_fn, z0, gtol=gtol, max_iter=max_iter, box=box)
    if res.status[0] != STATUS_GRADIENT:
        raise ConvergenceError(
            f"box-constrained search stopped with status {res.status[0]!r}, "
            f"projected gradient norm {float(res.measure[0]):.3e} > {gtol:.1e}")
    return res.z[0].detach()


# ---------------------------------------------------------------------------
# radius line search

class Reachability(enum.Enum):
    REACHABLE = "reachable"
    DEGENERATE = "degenerate"
    UNREACHABLE = "unreachable"


def level_reachable(prop_fn, z_star, alpha: float) -> Reachability:
    """Trichotomy of a level against the minimum value F(z*)."""
    z = torch.as_tensor(z_star, dtype=DTYPE).reshape(1, -1)
    with torch.no_grad():
        f0 = float(prop_fn(z)[0])
    if alpha > f0:
        return Reachability.REACHABLE
    if alpha == f0:
        return Reachability.DEGENERATE
    return Reachability.UNREACHABLE


def _bisect_radius(F_at, lo: Tensor, hi: Tensor, alpha: float, thresh: float,
                   max_bisect: int) -> tuple[Tensor, Tensor]:
    """Bisect per-row brackets [lo, hi] with F(lo) < alpha <= F(hi)."""
    M = lo.shape[0]
    r_out = torch.zeros(M, dtype=DTYPE)
    f_out = torch.zeros(M, dtype=DTYPE)
    open_rows = torch.ones(M, dtype=torch.bool)
    for _ in range(max_bisect):
        if not open_rows.any():
            break
        p = open_rows.nonzero(as_tuple=True)[0]
        mid = 0.5 * (lo[p] + hi[p])
        f_mid = F_at(mid, p)
        done = (f_mid - alpha).abs() <= thresh
        hit = p[done]
        r_out[hit] = mid[done]
        f_out[hit] = f_mid[done]
        open_rows[hit] = False
        below = f_mid < alpha
        lo[p[below & ~done]] = mid[below & ~done]
        hi[p[~below & ~done]] = mid[~below & ~done]
    if open_rows.any():
        raise ConvergenceError(
            f"radius bisection failed tolerance {thresh:.3e} on "
            f"{int(open_rows.sum())} direction(s) after {max_bisect} iterations")
    return r_out, f_out


def _radius_batch(prop_fn, z_star: Tensor, U: Tensor, alpha: float, *,
                  tol: float = 1e-6, r_max: float = 1e3,
                  max_bisect: int = 200) -> tuple[Tensor, Tensor]:
    """Vectorised bracket-and-bisect along many rays at once.

    Returns radii and achieved values, one per direction row. Assumes the
    level was checked reachable from z_star.
    """
    z0 = z_star.reshape(1, -1)
    M = U.shape[0]
    thresh = tol * (1.0 + abs(alpha))

    def F_at(r: Tensor, rows: Tensor) -> Tensor:
        with torch.no_grad():
            return prop_fn(z0 + r.unsqueeze(1) * U[rows])

    lo = torch.zeros(M, dtype=DTYPE)
    hi = torch.full((M,), 1e-3, dtype=DTYPE)
    growing = torch.ones(M, dtype=torch.bool)
    for _ in range(64):
        if not growing.any():
            break
        p = growing.nonzero(as_tuple=True)[0]
        f_hi = F_at(hi[p], p)
        crossed = f_hi >= alpha
        growing[p[crossed]] = False
        need = p[~crossed]
        at_cap = hi[need] >= r_max
        if at_cap.any():
            raise LevelBeyondRange(
                f"level {alpha} not crossed within r_max={r_max} along "
                f"{int(at_cap.sum())} direction(s)")
        lo[need] = hi[need]
        hi[need] = torch.minimum(hi[need] * 2.0, torch.full_like(hi[need], r_max))

    return _bisect_radius(F_at, lo, hi, alpha, thresh, max_bisect)


def _box_exit_radius(box: SubspaceBox, z_star: Tensor, U: Tensor) -> Tensor:
    """Distance from z_star (inside the box) to the box boundary along each
    direction row of U."""
    span_hi = box.hi_t().unsqueeze(0) - z_star.reshape(1, -1)
    span_lo = box.lo_t().unsqueeze(0) - z_star.reshape(1, -1)
    inf = torch.full_like(U, math.inf)
    t_hi = torch.where(U > 0, span_hi / U, inf)
    t_lo = torch.where(U < 0, span_lo / U, inf)
    return torch.minimum(t_hi, t_lo).min(dim=1).values.clamp_min(0.0)


def _radius_batch_capped(prop_fn, z_star: Tensor, U: Tensor, alpha: float,
                         caps: Tensor, *, tol: float = 1e-6,
                         max_bisect: int = 200) -> tuple[Tensor, Tensor, Tensor]:
    """Radius search along rays truncated at per-row caps.

    From the box minimum the property is non-decreasing along every ray
    that stays inside the box, so a single evaluation at the cap decides
    whether the ray meets the level before leaving: F(cap) >= alpha means
    exactly one crossing in [0, cap]. Returns radii, achieved values and a
    boolean hit mask; missing rows (level not met before the boundary) are
    left at zero and are not an error.
    """
    z0 = z_star.reshape(1, -1)
    M = U.shape[0]
    thresh = tol * (1.0 + abs(alpha))

    def F_at(r: Tensor, rows: Tensor) -> Tensor:
        with torch.no_grad():
            return prop_fn(z0 + r.unsqueeze(1) * U[rows])

    f_cap = F_at(caps, torch.arange(M))
    hit = f_cap >= alpha - thresh
    r_out = torch.zeros(M, dtype=DTYPE)
    f_out = torch.zeros(M, dtype=DTYPE)
    at_cap = hit & ((f_cap - alpha).abs() <= thresh)
    r_out[at_cap] = caps[at_cap]
    f_out[at_cap] = f_cap[at_cap]
    need = (hit & ~at_cap).nonzero(as_tuple=True)[0]
    if need.shape[0]:
        sub_lo = torch.zeros(need.shape[0], dtype=DTYPE)
        sub_hi = caps[need].clone()

        def F_sub(r: Tensor, rows: Tensor) -> Tensor:
            return F_at(r, need[rows])

        r_sub, f_sub = _bisect_radius(F_sub, sub_lo, sub_hi, alpha, thresh,
                                      max_bisect)
        r_out[need] = r_sub
        f_out[need] = f_sub
    return r_out, f_out, hit


def _as_angles(angles, n: int) -> SphericalPoint:
    if isinstance(angles, SphericalPoint):
        return SphericalPoint(1.0, angles.latitudes, angles.azimuth)
    if isinstance(angles, (int, float)):
        if n != 2:
            raise ValueError("a bare azimuth only makes sense for n=2")
        return SphericalPoint(1.0, (), float(angles))
    seq = tuple(float(a) for a in angles)
    if len(seq) != n - 1:
        raise ValueError(f"expected {n - 1} angles for n={n}, got {len(seq)}")
    return SphericalPoint(1.0, seq[:-1], seq[-1])


def radius_search(prop_fn, z_star, angles, alpha: float, *, tol: float = 1e-6,
                  r_max: float = 1e3) -> float:
    """Radius at which the ray from z* along the given direction meets the
    level alpha; unique by strict quasi-convexity."""
    z = torch.as_tensor(z_star, dtype=DTYPE).reshape(-1)
    verdict = level_reachable(prop_fn, z, alpha)
    if verdict is not Reachability.REACHABLE:
        with torch.no_grad():
            f0 = float(prop_fn(z.reshape(1, -1))[0])
        raise LevelNotReachable(f"alpha={alpha} is not above the minimum value {f0}")
    p = _as_angles(angles, z.shape[0])
    u = torch.as_tensor(sph_to_cart(p, z.shape[0]), dtype=DTYPE).reshape(1, -1)
    r, _ = _radius_batch(prop_fn, z, u, alpha, tol=tol, r_max=r_max)
    return float(r[0])


# ---------------------------------------------------------------------------
# level-set sampling and interpolation

@dataclass
class LevelSetQuery:
    """Bundle of level-set request parameters (used by the CLI)."""

    alpha: float
    count: int = 64
    latitudes: tuple[float, ...] | None = None
    tol: float = 1e-6
    r_max: float = 1e3

    def __post_init__(self):
        if self.tol <= 0 or self.r_max <= 0:
            raise ValueError("tol and r_max must be positive")
        if self.count < 1:
            raise ValueError("count must be >= 1")


@dataclass
class LevelSetPoints:
    """Points on one level set, in latent and input space."""

    alpha: float
    latent: Tensor                 # [m, d]
    inputs: Tensor                 # [m, d]
    radii: np.ndarray              # [m]
    azimuth: np.ndarray            # [m]
    latitudes: np.ndarray          # [m, d-2]
    values: Tensor                 # [m] achieved property values


@dataclass
class LevelSetPath(LevelSetPoints):
    """Ordered on-level path whose first and last rows are the exact
    requested endpoints."""


def _require_invertible(model):
    if not getattr(model, "exact_inverse", False):
        raise ValueError("level-set extraction needs a model with an exact "
                         "inverse decoder")


def _minimum_for(model, z_star, subspace: SubspaceBox | None = None):
    if z_star is not None:
        zs = torch.as_tensor(z_star, dtype=DTYPE).reshape(-1)
        if subspace is not None and not subspace.contains(zs):
            raise ValueError("z_star must lie inside the subspace box")
        return zs
    if subspace is not None:
        return find_minimum_box(model.property_latent, subspace)
    start = torch.zeros(model.latent_dim, dtype=DTYPE)
    return find_minimum(model.property_latent, start)


def levelset_sample(model, alpha: float, count: int, *, latitudes=None,
                    tol: float = 1e-6, r_max: float = 1e3, z_star=None,
                    seed: int = 0,
                    subspace: SubspaceBox | None = None) -> LevelSetPoints:
    """Sample `count` points of the alpha-level set.

    n=2 sweeps the azimuth uniformly; n>2 either fixes the supplied
    latitudes (great-circle slice) or draws directions uniformly on the
    sphere from the given seed. A degenerate level (alpha equal to the
    minimum value) collapses to the single point z*.

    With `subspace` the level set is parameterised inside that box around
    its constrained minimum: each ray is followed only up to the boundary,
    directions that leave the box below alpha contribute no point, and the
    result can hold fewer than `count` rows. This is how to extract level
    sets of maps whose global infimum is not attained, or to restrict
    attention to a trusted region.
    """
    _require_invertible(model)
    n = model.latent_dim
    if subspace is not None and subspace.dim != n:
        raise ValueError(f"subspace box has dim {subspace.dim}, model latent "
                         f"dim is {n}")
    zs = _minimum_for(model, z_star, subspace)
    verdict = level_reachable(model.property_latent, zs, alpha)
    if verdict is Reachability.UNREACHABLE:
        with torch.no_grad():
            f0 = float(model.property_latent(zs.reshape(1, -1))[0])
        raise LevelNotReachable(f"alpha={alpha} is below the minimum value {f0}")
    if verdict is Reachability.DEGENERATE:
        with torch.no_grad():
            x = model.decode_mean(zs.reshape(1, -1))
            f = model.property_latent(zs.reshape(1, -1))
        return LevelSetPoints(alpha=alpha, latent=zs.reshape(1, -1), inputs=x,
                              radii=np.zeros(1), azimuth=np.zeros(1),
                              latitudes=np.zeros((1, n - 2)), values=f)

    if n == 2:
        azim = 2.0 * math.pi * np.arange(count) / count
        lats = np.zeros((count, 0))
    elif latitudes is not None:
        lats = np.tile(np.asarray(latitudes, dtype=np.float64), (count, 1))
        if lats.shape[1] != n - 2:
            raise ValueError(f"expected {n - 2} fixed latitudes")
        azim = 2.0 * math.pi * np.arange(count) / count
    else:
        rng = np.random.default_rng(seed)
        raw = rng.standard_normal((count, n))
        raw /= np.linalg.norm(raw, axis=1, keepdims=True)
        sph = [cart_to_sph(row) for row in raw]
        lats = np.array([p.latitudes for p in sph])
        azim = np.array([p.azimuth for p in sph])

    U = torch.as_tensor(
        np.stack([_unit_vector(lats[i], float(azim[i]), n) for i in range(count)]),
        dtype=DTYPE)
    if subspace is None:
        r, f = _radius_batch(model.property_latent, zs, U, alpha, tol=tol,
                             r_max=r_max)
    else:
        caps = _box_exit_radius(subspace, zs, U)
        r, f, hit = _radius_batch_capped(model.property_latent, zs, U, alpha,
                                         caps, tol=tol)
        if not hit.any():
            raise LevelNotReachable(
                f"alpha={alpha} is not met inside the subspace along any of "
                f"{count} probed directions")
        keep = hit.numpy()
        U, r, f = U[hit], r[hit], f[hit]
        azim, lats = azim[keep], lats[keep]
    latent = zs.reshape(1, -1) + r.unsqueeze(1) * U
    with torch.no_grad():
        inputs = model.decode_mean(latent)
    return LevelSetPoints(alpha=alpha, latent=latent, inputs=inputs,
                          radii=r.numpy(), azimuth=azim, latitudes=lats, values=f)


def levelset_interpolate(model, x_a, x_b, alpha: float, steps: int, *,
                         tol: float = 1e-6, r_max: float = 1e3, z_star=None,
                         subspace: SubspaceBox | None = None) -> LevelSetPath:
    """On-level path between two input points.

    Angles about z* interpolate linearly (azimuth along the shortest arc),
    the radius is re-solved at every waypoint, and the returned endpoints
    are exactly the requested inputs.

    With `subspace` the waypoint rays stop at the box boundary (z* then
    defaults to the constrained minimum). The swept sector must cross the
    level at every waypoint; endpoints on level-set pieces separated by a
    below-alpha stretch of the boundary cannot be joined on-level inside
    the box, and that raises LevelBeyondRange.
    """
    _require_invertible(model)
    if steps < 2:
        raise ValueError("steps must be >= 2 (endpoints included)")
    n = model.latent_dim
    xa, _ = as_batch(x_a, model.input_dim, "x_a")
    xb, _ = as_batch(x_b, model.input_dim, "x_b")
    with torch.no_grad():
        za = model.encode_mean(xa)[0]
        zb = model.encode_mean(xb)[0]
        fa = float(model.property_latent(za.reshape(1, -1))[0])
        fb = float(model.property_latent(zb.reshape(1, -1))[0])
    slack = 10.0 * tol * (1.0 + abs(alpha))
    for name, fv in (("x_a", fa), ("x_b", fb)):
        if abs(fv - alpha) > slack:
            raise EndpointOffLevel(
                f"{name} has F={fv}, off level alpha={alpha} by more than {slack:.3e}")

    zs = _minimum_for(model, z_star, subspace)
    pa = cart_to_sph((za - zs).numpy())
    pb = cart_to_sph((zb - zs).numpy())
    t = np.linspace(0.0, 1.0, steps)
    lat_a = np.asarray(pa.latitudes)
    lat_b = np.asarray(pb.latitudes)
    delta = math.remainder(pb.azimuth - pa.azimuth, 2.0 * math.pi)  # shortest arc
    lats = (1.0 - t)[:, None] * lat_a[None, :] + t[:, None] * lat_b[None, :]
    azim = np.mod(pa.azimuth + t * delta, 2.0 * math.pi)
    azim[azim >= 2.0 * math.pi] = 0.0
    azim[0], azim[-1] = pa.azimuth, pb.azimuth

    rows = list(range(1, steps - 1))
    radii = np.empty(steps)
    radii[0], radii[-1] = pa.radius, pb.radius
    values = torch.empty(steps, dtype=DTYPE)
    values[0], values[-1] = fa, fb
    latent = torch.empty(steps, n, dtype=DTYPE)
    latent[0], latent[-1] = za, zb
    inputs = torch.empty(steps, model.input_dim, dtype=DTYPE)
    inputs[0], inputs[-1] = xa[0], xb[0]
    if rows:
        U = torch.as_tensor(
            np.stack([_unit_vector(lats[i], float(azim[i]), n) for i in rows]),
            dtype=DTYPE)
        if subspace is None:
            r, f = _radius_batch(model.property_latent, zs, U, alpha, tol=tol,
                                 r_max=r_max)
        else:
            caps = _box_exit_radius(subspace, zs, U)
            r, f, hit = _radius_batch_capped(model.property_latent, zs, U,
                                             alpha, caps, tol=tol)
            if not bool(hit.all()):
                misses = int((~hit).sum())
                raise LevelBeyondRange(
                    f"the on-level path leaves the subspace: {misses} of "
                    f"{len(rows)} waypoint rays exit the box below "
                    f"alpha={alpha}")
        z_mid = zs.reshape(1, -1) + r.unsqueeze(1) * U
        with torch.no_grad():
            x_mid = model.decode_mean(z_mid)
        radii[1:-1] = r.numpy()
        values[1:-1] = f
        latent[1:-1] = z_mid
        inputs[1:-1] = x_mid
    return LevelSetPath(alpha=alpha, latent=latent, inputs=inputs, radii=radii,
                        azimuth=azim, latitudes=lats, values=values)
