"""Scalar fields on the masked lattice: quadrature, derivatives, curls.

Measure convention: integrals are taken against r dr dz (the 2*pi of the
volume element is dropped everywhere, consistently).  integrate(f, k) adds
the extra weight r^k on top of that.

All reductions that feed diagnostics go through tree_sum, a fixed
lexicographic pairwise reduction, so results are bit-identical across runs
and thread counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import (
    BOUNDARY_H,
    BOUNDARY_V,
    CORNER_CONVEX,
    CORNER_REENTRANT,
    Grid,
)
from .errors import ParameterError, UsageError

BC_FAMILIES = ("neumann-all", "dirichlet-all", "mixed-vr", "mixed-v3", "none")

try:  # optional single-threaded kernels; arithmetic matches numpy bit for bit
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

if HAVE_NUMBA:

    @_njit(cache=True)
    def _tree_fold_kernel(buf):
        size = buf.shape[0]
        while size > 1:
            half = size // 2
            for i in range(half):
                buf[i] = buf[2 * i] + buf[2 * i + 1]
            size = half
        return buf[0]


def tree_sum(values: np.ndarray) -> float:
    """Sum by folding adjacent pairs, lexicographic order, until one element.

    The reduction tree depends only on the array length, which makes the
    result independent of chunking or thread count.  Zero-padding to the
    next power of two realises exactly the same tree (zeros are absorbing).
    """
    a = np.asarray(values, dtype=np.float64).ravel()
    n = a.size
    if n == 0:
        return 0.0
    k = 1 << (n - 1).bit_length()
    buf = np.zeros(k)
    buf[:n] = a
    if HAVE_NUMBA and k >= 2048:
        return float(_tree_fold_kernel(buf))
    while buf.size > 1:
        buf = buf[0::2] + buf[1::2]
    return float(buf[0])


@dataclass
class GridField:
    """values[i, k] at (r[i], z[k]); zero is stored at inactive nodes.

    bc_family records which slip-condition family the field obeys, which in
    turn fixes ghost values for derivatives and the pinned set for solves:
      neumann-all   h = v_theta/r        (dn = 0 on all walls)
      dirichlet-all Omega = omega_theta/r (value 0 on the whole boundary)
      mixed-vr      v_r   (dz = 0 on H, value 0 on V)
      mixed-v3      v_3   (value 0 on H, dr = 0 on V)
      none          derived quantities with no prescribed condition
    """

    grid: Grid
    values: np.ndarray
    bc_family: str = "none"

    def __post_init__(self):
        if self.bc_family not in BC_FAMILIES:
            raise ParameterError(f"unknown bc family {self.bc_family!r}")
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.grid.shape:
            raise UsageError(
                f"values shape {v.shape} does not match grid {self.grid.shape}"
            )
        v = np.where(self.grid.active, v, 0.0)
        if self.bc_family == "dirichlet-all":
            v = np.where(self.grid.boundary, 0.0, v)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid: Grid, bc_family: str = "none") -> "GridField":
        return cls(grid, np.zeros(grid.shape), bc_family)

    @classmethod
    def from_function(cls, grid: Grid, fn, bc_family: str = "none") -> "GridField":
        rr, zz = np.meshgrid(grid.r, grid.z, indexing="ij")
        return cls(grid, np.where(grid.active, fn(rr, zz), 0.0), bc_family)

    def copy_with(self, values: np.ndarray, bc_family: str | None = None):
        return GridField(self.grid, values, bc_family or self.bc_family)

    def check_finite(self) -> bool:
        return bool(np.isfinite(self.values[self.grid.active]).all())

    def max_abs(self) -> float:
        act = self.grid.active
        if not act.any():
            return 0.0
        return float(np.abs(self.values[act]).max())

    def to_records(self):
        """(node index, r, z, value) rows over active nodes, lexicographic."""
        act = self.grid.active
        idx = np.flatnonzero(act.ravel())
        rr = self.grid.rr().ravel()[idx]
        zz = np.broadcast_to(self.grid.z[None, :], self.grid.shape).ravel()[idx]
        return idx, rr, zz, self.values.ravel()[idx]


def nested_prolong(coarse: Grid, fine: Grid, values: np.ndarray) -> np.ndarray:
    """Bilinear prolongation from a p-grid onto its p+1 refinement.

    Coarse nodes sit at the even-index fine nodes; odd nodes take edge or
    cell averages.  Used to warm-start solves in refinement studies.  Fine
    nodes outside the coarse active set (snapped step tops can move by half
    a coarse cell) just keep the interpolated value.
    """
    if fine.m != coarse.m or fine.p != coarse.p + 1:
        raise UsageError("nested_prolong expects the p+1 refinement of the grid")
    nr_c, nz_c = coarse.shape
    out = np.zeros(fine.shape)
    out[0 : 2 * nr_c : 2, 0 : 2 * nz_c : 2] = values
    out[1 : 2 * nr_c - 1 : 2, :] = 0.5 * (out[0:-2:2, :] + out[2::2, :])
    out[:, 1 : 2 * nz_c - 1 : 2] = 0.5 * (out[:, 0:-2:2] + out[:, 2::2])
    return np.where(fine.active, out, 0.0)


def dirichlet_mask(grid: Grid, family: str) -> np.ndarray:
    """Nodes whose value the family pins to zero.

    Corners never carry a one-sided derivative condition, but the value
    constraint of an adjacent Dirichlet segment extends to its endpoints by
    continuity (the W^{2,s} solutions are continuous up to the boundary), so
    every corner belonging to the closure of a pinned segment is pinned too.
    """
    tag = grid.tag
    corner = (tag == CORNER_CONVEX) | (tag == CORNER_REENTRANT)
    if family == "dirichlet-all":
        return tag >= BOUNDARY_H
    if family == "mixed-vr":
        return (tag == BOUNDARY_V) | corner
    if family == "mixed-v3":
        return (tag == BOUNDARY_H) | corner
    return np.zeros(grid.shape, dtype=bool)


def neumann_dirs(grid: Grid, family: str) -> tuple[np.ndarray, np.ndarray]:
    """(mask_r, mask_z): nodes where the family prescribes dn = 0 in r / in z."""
    tag = grid.tag
    none = np.zeros(grid.shape, dtype=bool)
    if family == "neumann-all":
        return (tag == BOUNDARY_V) | (tag == CORNER_CONVEX), (tag == BOUNDARY_H) | (
            tag == CORNER_CONVEX
        )
    if family == "mixed-vr":
        return none, tag == BOUNDARY_H
    if family == "mixed-v3":
        return tag == BOUNDARY_V, none
    return none, none


def _require_same_grid(*fields: GridField) -> Grid:
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid is not grid:
            raise UsageError("fields live on different grids")
    return grid


def integrate(f: GridField, weight_power: int = 0) -> float:
    """Trapezoid-on-mask integral of f against r^(1+weight_power) dr dz."""
    k = int(weight_power)
    if not -4 <= k <= 2:
        raise ParameterError(f"weight power {k} outside supported range [-4, 2]")
    w = f.grid.quad_weights(k)
    return tree_sum(w * f.values)


def inner(f: GridField, g: GridField, weight_power: int = 0) -> float:
    grid = _require_same_grid(f, g)
    w = grid.quad_weights(weight_power)
    return tree_sum(w * f.values * g.values)


def lp_norm(f: GridField, p: float, weight_power: int = 0) -> float:
    """(integral of |f|^p r^(1+k))^(1/p); p = inf returns the active-node max."""
    if p == np.inf:
        return f.max_abs()
    if p < 1:
        raise ParameterError(f"p must be >= 1 or inf, got {p}")
    w = f.grid.quad_weights(weight_power)
    total = tree_sum(w * np.abs(f.values) ** p)
    return float(total ** (1.0 / p))


def _directional_derivative(grid, values, axis, neumann_mask):
    """Second-order derivative along one axis on the masked lattice.

    Centered where both neighbours are active; zero (mirror ghost) where the
    field's family prescribes a homogeneous Neumann condition; one-sided
    second order (first order on runs of two) otherwise.
    """
    act = grid.active
    v = np.where(act, values, 0.0)
    d = np.zeros(grid.shape)
    delta = grid.delta

    def shift(arr, off):
        out = np.zeros_like(arr)
        if off > 0:  # value of the neighbour `off` steps in +axis direction
            if axis == 0:
                out[:-off, :] = arr[off:, :]
            else:
                out[:, :-off] = arr[:, off:]
        else:
            off = -off
            if axis == 0:
                out[off:, :] = arr[:-off, :]
            else:
                out[:, off:] = arr[:, :-off]
        return out

    ap1, am1 = shift(act, 1), shift(act, -1)
    ap2, am2 = shift(act, 2), shift(act, -2)
    vp1, vm1 = shift(v, 1), shift(v, -1)
    vp2, vm2 = shift(v, 2), shift(v, -2)

    centered = act & ap1 & am1
    fwd2 = act & ap1 & ap2 & ~am1
    fwd1 = act & ap1 & ~ap2 & ~am1
    bwd2 = act & am1 & am2 & ~ap1
    bwd1 = act & am1 & ~am2 & ~ap1

    d[centered] = (vp1[centered] - vm1[centered]) / (2 * delta)
    d[fwd2] = (-3 * v[fwd2] + 4 * vp1[fwd2] - vp2[fwd2]) / (2 * delta)
    d[fwd1] = (vp1[fwd1] - v[fwd1]) / delta
    d[bwd2] = (3 * v[bwd2] - 4 * vm1[bwd2] + vm2[bwd2]) / (2 * delta)
    d[bwd1] = (v[bwd1] - vm1[bwd1]) / delta

    d[neumann_mask & act] = 0.0
    return d


def grad(f: GridField) -> tuple[GridField, GridField]:
    """(d/dr f, d/dz f) with the family's ghost rules at walls."""
    grid = f.grid
    nm_r, nm_z = neumann_dirs(grid, f.bc_family)
    dr = _directional_derivative(grid, f.values, 0, nm_r)
    dz = _directional_derivative(grid, f.values, 1, nm_z)
    return f.copy_with(dr, "none"), f.copy_with(dz, "none")


def flux_conductances(grid: Grid, weight_power: int = 1):
    """Edge conductances of the conservative r^w-weighted Laplacian.

    cr[i, k] couples (i, k)-(i+1, k) and carries the midpoint weight
    r_{i+1/2}^w times the transverse trapezoid factor (1/2 for edges lying
    on a wall); cz analogously for (i, k)-(i, k+1).  Edges with an inactive
    endpoint get conductance zero, which is exactly the zero-flux (Neumann)
    closure.
    """
    act = grid.active
    w = weight_power

    # transverse trapezoid factor per node and direction (see _trapezoid_weights)
    actf = act.astype(float)
    t_r = np.zeros(grid.shape)
    t_z = np.zeros(grid.shape)
    pad_r = np.zeros((1, grid.shape[1]))
    left = np.vstack([pad_r, actf[:-1, :]])
    right = np.vstack([actf[1:, :], pad_r])
    t_r[act] = 0.5 * (left[act] + right[act])
    pad_z = np.zeros((grid.shape[0], 1))
    down = np.hstack([pad_z, actf[:, :-1]])
    up = np.hstack([actf[:, 1:], pad_z])
    t_z[act] = 0.5 * (down[act] + up[act])

    r_mid = 0.5 * (grid.r[:-1] + grid.r[1:])
    cr = np.where(
        act[:-1, :] & act[1:, :],
        r_mid[:, None] ** w * np.minimum(t_z[:-1, :], t_z[1:, :]),
        0.0,
    )
    cz = np.where(
        act[:, :-1] & act[:, 1:],
        grid.r[:, None] ** w * np.minimum(t_r[:, :-1], t_r[:, 1:]),
        0.0,
    )
    return cr, cz


def volumes(grid: Grid, weight_power: int = 1) -> np.ndarray:
    """Node volume r^w * qhat * delta^2 (zero at inactive nodes)."""
    v = grid.qhat * grid.delta**2 * grid.r[:, None] ** weight_power
    return np.where(grid.active, v, 0.0)


def _graph_apply(values, cr, cz, active):
    """Sum over edges of c * (f_neighbour - f_node), actual neighbour values."""
    v = np.where(active, values, 0.0)
    acc = np.zeros_like(v)
    fr = cr * (v[1:, :] - v[:-1, :])
    acc[:-1, :] += fr
    acc[1:, :] -= fr
    fz = cz * (v[:, 1:] - v[:, :-1])
    acc[:, :-1] += fz
    acc[:, 1:] -= fz
    return acc


def laplacian_cyl(f: GridField) -> GridField:
    """Conservative (1/r) d_r (r d_r f) + d_zz f on active nodes.

    Uses the field's family for wall closures: Neumann walls get zero flux,
    Dirichlet-pinned nodes return zero (their rows are identities in the
    elliptic module).  Interior stencils reproduce f = r^2 -> 4 and
    f = z^2 -> 2 exactly.
    """
    grid = f.grid
    cr, cz = flux_conductances(grid, 1)
    vol = volumes(grid, 1)
    pinned = dirichlet_mask(grid, f.bc_family)
    acc = _graph_apply(f.values, cr, cz, grid.active)
    out = np.zeros(grid.shape)
    ok = grid.active & ~pinned
    out[ok] = acc[ok] / vol[ok]
    return f.copy_with(out, "none")


def vorticity_from_velocity(
    v_r: GridField, v_theta: GridField, v_3: GridField
) -> tuple[GridField, GridField, GridField]:
    """omega_r = -dz v_theta, omega_theta = dz v_r - dr v_3,
    omega_3 = dr v_theta + v_theta / r."""
    grid = _require_same_grid(v_r, v_theta, v_3)
    _, dvt_dz = grad(v_theta)
    _, dvr_dz = grad(v_r)
    dv3_dr, _ = grad(v_3)
    dvt_dr, _ = grad(v_theta)
    omega_r = -dvt_dz.values
    omega_t = dvr_dz.values - dv3_dr.values
    omega_3 = dvt_dr.values + np.where(grid.active, v_theta.values / grid.rr(), 0.0)
    mk = lambda a: GridField(grid, a, "none")
    return mk(omega_r), mk(omega_t), mk(omega_3)


def divergence_b(v_r: GridField, v_3: GridField) -> GridField:
    """(1/r) d_r (r v_r) + d_z v_3, half-node flux form.

    The face flux is the average of the nodal flux density (r*v_r, resp.
    v_3), which makes the stencil annihilate centered-curl streamfunction
    velocities exactly.  One-sided closures apply where a neighbour is
    missing.
    """
    grid = _require_same_grid(v_r, v_3)
    rr = grid.rr()
    w = GridField(grid, np.where(grid.active, rr * v_r.values, 0.0), "none")
    dw_dr = _directional_derivative(grid, w.values, 0, np.zeros(grid.shape, bool))
    _, dv3_dz = grad(v_3)
    out = np.where(grid.active, dw_dr / rr + dv3_dz.values, 0.0)
    return GridField(grid, out, "none")
